//! Field snapshots: a JSON header plus the stored values w = r u as raw
//! little-endian (re, im) f64 pairs.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};

pub const FORMAT: &str = "nlslab-snapshot-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub time: f64,
    pub n: usize,
    pub radius: f64,
    pub manifest_sha256: String,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub values: Vec<Complex64>,
}

impl Snapshot {
    pub fn new(field: &RadialField, time: f64, manifest_sha256: &str) -> Self {
        let grid = field.grid();
        Snapshot {
            header: SnapshotHeader {
                format: FORMAT.into(),
                time,
                n: grid.len(),
                radius: grid.radius(),
                manifest_sha256: manifest_sha256.into(),
            },
            values: field.values().to_vec(),
        }
    }

    pub fn encode(&self) -> (String, Vec<u8>) {
        let header = serde_json::to_string_pretty(&self.header).expect("header serializes");
        let mut payload = Vec::with_capacity(16 * self.values.len());
        for z in &self.values {
            payload.extend_from_slice(&z.re.to_le_bytes());
            payload.extend_from_slice(&z.im.to_le_bytes());
        }
        (header, payload)
    }

    pub fn decode(header: &[u8], payload: &[u8]) -> Result<Self> {
        let header: SnapshotHeader =
            serde_json::from_slice(header).map_err(|e| Error::Snapshot(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Snapshot(format!("unknown format {:?}", header.format)));
        }
        if header.n < 16 || !(header.radius > 0.0 && header.radius.is_finite()) || !header.time.is_finite() {
            return Err(Error::Snapshot("header describes an invalid grid or time".into()));
        }
        if header.n.checked_mul(16) != Some(payload.len()) {
            return Err(Error::Snapshot(format!("payload has {} bytes, expected {} values", payload.len(), header.n)));
        }
        let values: Vec<Complex64> = payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Snapshot("non-finite value".into()));
        }
        Ok(Snapshot { header, values })
    }

    /// The field on a grid rebuilt from the header.
    pub fn field(&self) -> Result<RadialField> {
        let grid = RadialGrid::new(self.header.n, self.header.radius)?;
        RadialField::from_values(&grid, self.values.clone())
    }

    /// The field on an existing grid, which must match the header.
    pub fn field_on(&self, grid: &Arc<RadialGrid>) -> Result<RadialField> {
        if grid.len() != self.header.n || grid.radius() != self.header.radius {
            return Err(Error::GridMismatch);
        }
        RadialField::from_values(grid, self.values.clone())
    }

    /// Write `<stem>.json` and `<stem>.bin` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let (header, payload) = self.encode();
        std::fs::write(dir.join(format!("{stem}.json")), header)?;
        std::fs::write(dir.join(format!("{stem}.bin")), payload)?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let header = std::fs::read(dir.join(format!("{stem}.json")))?;
        let payload = std::fs::read(dir.join(format!("{stem}.bin")))?;
        Self::decode(&header, &payload)
    }
}

/// Split a single buffer `header \0 payload` into its parts and decode.
pub fn decode_joined(data: &[u8]) -> Result<Snapshot> {
    let cut = data.iter().position(|&b| b == 0).ok_or_else(|| Error::Snapshot("missing header terminator".into()))?;
    Snapshot::decode(&data[..cut], &data[cut + 1..])
}

pub fn encode_joined(snapshot: &Snapshot) -> Vec<u8> {
    let (header, payload) = snapshot.encode();
    let mut out = header.into_bytes();
    out.push(0);
    out.extend_from_slice(&payload);
    out
}
