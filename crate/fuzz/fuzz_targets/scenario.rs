#![no_main]
use libfuzzer_sys::fuzz_target;
use qobs::scenario::parse_scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sc) = parse_scenario(text) {
        let again = parse_scenario(&sc.to_json()).expect("serialized scenario must parse");
        assert_eq!(sc.doc, again.doc);
        let _ = sc.channel();
        let _ = sc.schedule();
    }
});
