#![no_main]

use libfuzzer_sys::fuzz_target;
use ono::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes().expect("re-encode");
        let again = Checkpoint::from_bytes(&bytes).expect("decode re-encoded checkpoint");
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
