#![no_main]
use libfuzzer_sys::fuzz_target;
use qobs::channels::KrausChannel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ch) = KrausChannel::from_json(text) {
        let s = ch.to_json();
        let back = KrausChannel::from_json(&s).expect("serialized channel must parse");
        assert_eq!(back.to_json(), s);
        let _ = ch.effective_observable();
    }
});
