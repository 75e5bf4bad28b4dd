#![no_main]
use libfuzzer_sys::fuzz_target;
use qobs::matrix::{matrix_from_json, matrix_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = matrix_from_json(text) {
        let back = matrix_from_json(&matrix_to_json(&m)).expect("round trip");
        assert_eq!(m, back);
    }
});
