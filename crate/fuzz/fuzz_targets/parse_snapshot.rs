#![no_main]

use fastkf::io::{decode_snapshot, encode_snapshot};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_snapshot(data) {
        assert!(state.validate().is_ok());
        assert_eq!(encode_snapshot(&state).unwrap(), data);
    }
});
