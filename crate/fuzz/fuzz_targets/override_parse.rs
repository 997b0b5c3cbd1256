#![no_main]

use libfuzzer_sys::fuzz_target;
use nlslab::config::{parse_override, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((section, key, _)) = parse_override(text) {
        assert!(!section.is_empty() && !key.is_empty());
        let _ = RunConfig::from_text("", &[text.to_string()]);
    }
});
