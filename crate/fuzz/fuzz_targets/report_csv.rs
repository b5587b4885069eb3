#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = igabem::report::parse_report(text) {
            for w in report.rows.windows(2) {
                assert_eq!(w[1].iter, w[0].iter + 1);
            }
        }
    }
});
