#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::dialogue::parse_plan;
use sentinel_core::domain::validate_plan;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = parse_plan(text) {
        assert!(!plan.is_empty());
        let _ = validate_plan(&plan);
    }
});
