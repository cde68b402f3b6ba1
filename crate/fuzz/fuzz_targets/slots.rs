#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::dialogue::{missing_slots, parse_slots};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(slots) = parse_slots(text) {
        slots.window.validate().expect("parsed windows are ordered");
        let _ = missing_slots(&slots);
    }
});
