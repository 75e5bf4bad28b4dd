#![no_main]
use libfuzzer_sys::fuzz_target;
use qobs::scenario::parse_schedule_file;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = parse_schedule_file(text) {
        for k in 1..4 {
            let _ = file.timelines(k);
        }
    }
});
