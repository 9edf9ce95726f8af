#![no_main]

use fastkf::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(cfg) = ExperimentConfig::from_json(text) else {
        return;
    };
    let json = cfg.to_json().unwrap();
    let back = ExperimentConfig::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
    let resolved = cfg.resolve().unwrap();
    assert!(resolved.kernel.length.is_some() && resolved.plume.is_some());
});
