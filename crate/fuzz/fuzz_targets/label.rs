#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::llm::parse_label;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_label(text);
    }
});
