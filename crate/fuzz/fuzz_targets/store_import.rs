#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::store::IocStore;

fuzz_target!(|data: &[u8]| {
    let store = IocStore::in_memory();
    if store.import(data).is_ok() {
        let mut out = Vec::new();
        store.export(&mut out).unwrap();
        let copy = IocStore::in_memory();
        copy.import(out.as_slice()).unwrap();
        assert_eq!(copy.all_records(), store.all_records());
    }
});
