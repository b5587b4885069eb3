#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(traces) = igabem::trace::parse_trace(text) {
            let mut buf = Vec::new();
            for t in &traces {
                t.write(&mut buf).unwrap();
            }
            let again = igabem::trace::parse_trace(std::str::from_utf8(&buf).unwrap()).unwrap();
            assert_eq!(again.len(), traces.len());
        }
    }
});
