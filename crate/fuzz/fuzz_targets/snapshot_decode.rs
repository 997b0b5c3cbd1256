#![no_main]

use libfuzzer_sys::fuzz_target;
use nlslab::snapshot::{decode_joined, encode_joined};

fuzz_target!(|data: &[u8]| {
    if let Ok(snap) = decode_joined(data) {
        let again = decode_joined(&encode_joined(&snap)).expect("re-encoded snapshot decodes");
        assert_eq!(again.header.time.to_bits(), snap.header.time.to_bits());
        let _ = snap.field();
    }
});
