#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Snapshot tables come from disk; the loader sees arbitrary bytes.
    let _ = evofam_core::family::load_snapshot_csv(data);
});
