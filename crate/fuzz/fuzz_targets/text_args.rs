#![no_main]

use libfuzzer_sys::fuzz_target;
use ono::diagnostics::GradScope;
use ono::eigen::AnalyticKernel;
use ono::training::SuperResMode;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(k) = s.parse::<AnalyticKernel>() {
        assert!(k.validate().is_ok());
    }
    if let Ok(scope) = s.parse::<GradScope>() {
        assert_eq!(scope.to_string().parse::<GradScope>().unwrap(), scope);
    }
    if let Ok(mode) = s.parse::<SuperResMode>() {
        assert_eq!(mode.to_string(), s);
    }
});
