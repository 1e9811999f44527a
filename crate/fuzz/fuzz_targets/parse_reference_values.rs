#![no_main]

use libfuzzer_sys::fuzz_target;
use reluqc::io::parse_reference_values;
use reluqc::qc::QcKind;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(refs) = parse_reference_values(text) {
        for table in [&refs.stability_table, &refs.gain_table] {
            for &n in &table.horizons {
                let _ = table.value(QcKind::ReluFull, n);
                let _ = table.value(QcKind::DoublyHyperdominant, n);
            }
        }
    }
});
