#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The flat key = value parser must reject garbage with an error,
    // never a panic.
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = evofam_core::config::parse_config(s);
    }
});
