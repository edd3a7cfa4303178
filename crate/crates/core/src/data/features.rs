//! Little-endian binary feature file.
//!
//! ```text
//! magic   8 bytes  "HIERDS1\0"
//! version u32      1
//! count   u32      number of rows
//! dim     u32      features per row
//! rows    count × (u64 id, u32 label, dim × f32)
//! ```

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"HIERDS1\0";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let count = u32::try_from(ds.len()).map_err(|_| Error::invalid("too many rows"))?;
    let dim = u32::try_from(ds.dim).map_err(|_| Error::invalid("dimension too large"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (12 + 4 * ds.dim));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for i in 0..ds.len() {
        out.extend_from_slice(&ds.ids[i].to_le_bytes());
        out.extend_from_slice(&ds.labels[i].to_le_bytes());
        for x in ds.row(i) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: "feature header",
            needed: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            what: "feature file",
            expected: "HIERDS1\\0".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "feature file",
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let count = u32_at(12) as u64;
    let dim = u32_at(16) as u64;
    let needed = HEADER_LEN as u64 + count * (12 + 4 * dim);
    let found = bytes.len() as u64;
    if found < needed {
        return Err(Error::Truncated {
            what: "feature rows",
            needed,
            found,
        });
    }
    if found > needed {
        return Err(Error::Validation(format!(
            "{} trailing bytes after {count} rows",
            found - needed
        )));
    }
    let (count, dim) = (count as usize, dim as usize);
    let mut ids = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count * dim);
    let mut off = HEADER_LEN;
    for _ in 0..count {
        ids.push(u64::from_le_bytes(
            bytes[off..off + 8].try_into().expect("8 bytes"),
        ));
        labels.push(u32_at(off + 8));
        off += 12;
        for _ in 0..dim {
            features.push(f32::from_le_bytes(
                bytes[off..off + 4].try_into().expect("4 bytes"),
            ));
            off += 4;
        }
    }
    Dataset::new(ids, labels, dim, features)
}

pub fn write_features(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_features(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
