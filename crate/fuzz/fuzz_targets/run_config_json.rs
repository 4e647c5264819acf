#![no_main]

use libfuzzer_sys::fuzz_target;
use ono::model::OnoModel;
use ono::training::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<RunConfig>(data) else {
        return;
    };
    let _ = cfg.train.validate();
    // only build small models; validation itself must not panic at any size
    let m = &cfg.model;
    if m.validate().is_ok() && m.layers * m.width.max(m.feature_width) * m.eigen_count.max(1) <= 4096 {
        let _ = OnoModel::new(cfg.model.clone());
    }
    let text = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back.train.epochs, cfg.train.epochs);
    assert_eq!(back.model.layers, cfg.model.layers);
});
