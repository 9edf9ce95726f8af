#![no_main]

use fastkf::io::parse_observations;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(batches) = parse_observations(text) {
        if let Some(first) = batches.first() {
            assert!(batches.iter().all(|b| b.len() == first.len()));
        }
    }
});
