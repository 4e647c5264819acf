#![no_main]

use libfuzzer_sys::fuzz_target;
use ono_cli::RunManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<RunManifest>(data) {
        let _ = m.job.manifest_path();
        let _ = m.job.artifacts();
        let text = serde_json::to_vec(&m).unwrap();
        let back: RunManifest = serde_json::from_slice(&text).unwrap();
        assert_eq!(back.job.artifacts(), m.job.artifacts());
    }
});
