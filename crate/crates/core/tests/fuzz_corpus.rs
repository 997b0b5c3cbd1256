//! Replays the checked-in fuzz corpus through the same bodies as the fuzz
//! targets, so the parsers are exercised on stable without libfuzzer.

use std::fs;
use std::path::PathBuf;

use nlslab::config::{parse_ini, parse_override, RunConfig};
use nlslab::snapshot::{decode_joined, encode_joined};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn config_body(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    if parse_ini(text).is_err() {
        return false;
    }
    match RunConfig::from_text(text, &[]) {
        Ok(cfg) => {
            let _ = cfg.manifest_hash();
            true
        }
        Err(_) => false,
    }
}

fn override_body(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    match parse_override(text) {
        Ok((section, key, _)) => {
            assert!(!section.is_empty() && !key.is_empty());
            let _ = RunConfig::from_text("", &[text.to_string()]);
            true
        }
        Err(_) => false,
    }
}

fn snapshot_body(data: &[u8]) -> bool {
    match decode_joined(data) {
        Ok(snap) => {
            let again = decode_joined(&encode_joined(&snap)).expect("re-encoded snapshot decodes");
            assert_eq!(again.header.time.to_bits(), snap.header.time.to_bits());
            assert_eq!(again.values, snap.values);
            let _ = snap.field();
            true
        }
        Err(_) => false,
    }
}

fn accepted(target: &str, body: fn(&[u8]) -> bool) -> Vec<String> {
    seeds(target).into_iter().filter(|(_, d)| body(d)).map(|(n, _)| n).collect()
}

#[test]
fn config_seeds() {
    assert_eq!(accepted("config_parse", config_body), ["default.ini", "probes.ini", "subcritical.ini"]);
}

#[test]
fn override_seeds() {
    assert_eq!(accepted("override_parse", override_body), ["absorber", "grid_n", "spaced"]);
}

#[test]
fn snapshot_seeds() {
    assert_eq!(accepted("snapshot_decode", snapshot_body), ["small"]);
}

#[test]
fn truncations_of_seeds_never_panic() {
    for (target, body) in [
        ("config_parse", config_body as fn(&[u8]) -> bool),
        ("override_parse", override_body),
        ("snapshot_decode", snapshot_body),
    ] {
        for (_, data) in seeds(target) {
            for cut in 0..data.len() {
                body(&data[..cut]);
            }
        }
    }
}
