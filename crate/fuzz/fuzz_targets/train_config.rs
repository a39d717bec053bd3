#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = hgib::trainer::TrainConfig::from_json(data) {
        assert!(cfg.validate().is_ok());
    }
});
