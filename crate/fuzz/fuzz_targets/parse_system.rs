#![no_main]

use libfuzzer_sys::fuzz_target;
use reluqc::io::{parse_system, system_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ss) = parse_system(text) else {
        return;
    };
    // Anything accepted must survive a write/read cycle unchanged.
    let json = system_to_json(&ss);
    let again = parse_system(&json).expect("re-parse of serialized system");
    assert_eq!(system_to_json(&again), json);
});
