#![no_main]

use libfuzzer_sys::fuzz_target;
use ono::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::from_bytes(data) {
        let bytes = ds.to_bytes().expect("re-encode");
        let again = Dataset::from_bytes(&bytes).expect("decode re-encoded dataset");
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
