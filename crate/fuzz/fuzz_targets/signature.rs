#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::domain::{parse_signature, SignatureType};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let hints = SignatureType::ALL.into_iter().map(Some).chain([None]);
    for hint in hints {
        if let Ok(sig) = parse_signature(text, hint) {
            // normal form is a fixed point
            let again = parse_signature(&sig.value, Some(sig.kind)).expect("normalized value reparses");
            assert_eq!(again, sig);
        }
    }
});
