#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let names = hgib::data::default_class_names();
        if let Ok(rows) = hgib::data::parse_label_table(text, &names) {
            assert!(rows.iter().all(|(_, label)| *label < names.len()));
        }
    }
});
