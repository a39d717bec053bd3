#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = hgib::model::decode_checkpoint(data) {
        let again = hgib::model::decode_checkpoint(model.to_checkpoint().to_json().as_bytes());
        assert_eq!(again.ok(), Some(model));
    }
});
