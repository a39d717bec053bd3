#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = hgib::cli::ExperimentConfig::from_json(data);
});
