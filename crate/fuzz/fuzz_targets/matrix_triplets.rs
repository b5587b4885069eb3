#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(triplets) = igabem::trace::parse_triplets(text) {
            if triplets.iter().all(|t| t.0 < 64 && t.1 < 64) {
                let _ = igabem::trace::triplets_to_matrix(&triplets);
            }
        }
    }
});
