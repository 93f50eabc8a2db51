#![no_main]

use libfuzzer_sys::fuzz_target;
use mvkit_cli::parse::{parse_noise_list, parse_sigma_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sigmas) = parse_sigma_list(text) {
        assert!(!sigmas.is_empty());
        assert!(sigmas.iter().all(|s| s.is_finite() && *s > 0.0));
        assert_eq!(parse_noise_list(text).as_ref(), Ok(&sigmas));
    }
    let _ = parse_noise_list(text);
});
