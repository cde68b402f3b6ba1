#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::feeds::FeedCatalog;
use sentinel_service::Settings;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = Settings::from_toml_with(text, Vec::new());
    let _ = FeedCatalog::from_toml(text);
});
