#![no_main]

use chrono::{TimeZone, Utc};
use libfuzzer_sys::fuzz_target;
use sentinel_service::query::QueryParams;

fuzz_target!(|data: &[u8]| {
    let Ok(params) = serde_urlencoded::from_bytes::<QueryParams>(data) else { return };
    let now = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
    if let Ok(filter) = params.to_filter(now) {
        filter.validate().expect("built filters are valid");
    }
});
