#![no_main]

use chrono::{TimeZone, Utc};
use libfuzzer_sys::fuzz_target;
use sentinel_core::dialogue::resolve_relative;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let now = Utc.with_ymd_and_hms(2023, 1, 2, 15, 0, 0).unwrap();
    if let Some(w) = resolve_relative(text, now) {
        w.validate().expect("resolved windows are ordered");
        assert!(w.to_date.is_some_and(|t| t <= now));
    }
});
