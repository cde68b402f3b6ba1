#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::executor::{parse_cdb, render_cdb};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_cdb(text) {
        let rendered = render_cdb(&map).expect("parsed lists render");
        assert_eq!(parse_cdb(&rendered).unwrap(), map);
    }
});
