#![no_main]
use libfuzzer_sys::fuzz_target;
use qobs::scenario::{parse_samples, write_samples};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_samples(data) {
        let mut buf = Vec::new();
        write_samples(&mut buf, &rows).unwrap();
        let back = parse_samples(buf.as_slice()).expect("written samples must parse");
        assert_eq!(rows.len(), back.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }
});
