#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::llm::AuthoredScript;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = AuthoredScript::from_toml(text);
    }
});
