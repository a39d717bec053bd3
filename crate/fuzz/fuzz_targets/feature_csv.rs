#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = hgib::data::parse_feature_table(text) {
            assert_eq!(table.ids.len(), table.values.rows());
            assert_eq!(table.columns.len(), table.values.cols());
            assert!(table.values.is_finite());
        }
    }
});
