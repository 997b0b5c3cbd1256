#![no_main]

use libfuzzer_sys::fuzz_target;
use nlslab::config::{parse_ini, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if parse_ini(text).is_ok() {
        // a config that parses must also hash without panicking
        if let Ok(cfg) = RunConfig::from_text(text, &[]) {
            let _ = cfg.manifest_hash();
        }
    }
});
