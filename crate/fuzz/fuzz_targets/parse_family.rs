#![no_main]

use libfuzzer_sys::fuzz_target;
use reluqc::io::parse_family;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(family) = parse_family(text) else {
        return;
    };
    for alpha in [0.0, 0.5, 3.0] {
        let _ = family.build(alpha);
    }
    assert!(family.build(-1.0).is_err());
    let again = parse_family(&family.to_json()).expect("re-parse of serialized family");
    assert_eq!(again.to_json(), family.to_json());
});
