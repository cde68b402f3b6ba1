#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::domain::SourceId;
use sentinel_core::feeds::{normalize, FeedCatalog};

fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    let Ok(payload) = std::str::from_utf8(rest) else { return };
    let catalog = FeedCatalog::default();
    let source = catalog.get(SourceId::ALL[pick as usize % SourceId::ALL.len()]);
    if let Ok(n) = normalize(source, payload) {
        assert_eq!(n.records.len() + n.rejects.len(), n.fetched());
        for r in &n.records {
            r.validate().expect("normalized records are valid");
        }
    }
});
