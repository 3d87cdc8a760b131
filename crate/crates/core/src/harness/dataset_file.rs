//! Binary dataset layout (little-endian):
//!
//! ```text
//! b"VFSD" u16 version u16 K u16 height u16 width u16 classes u32 count
//! per sample: u8 label, K x (height * width) f32 row-major
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::{Dataset, Sample};

pub const DATASET_MAGIC: &[u8; 4] = b"VFSD";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 * 5 + 4;

fn u16_field(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit the header")))
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let hw = ds.height * ds.width;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (1 + 4 * ds.views * hw));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for (v, what) in [
        (ds.views, "view count"),
        (ds.height, "height"),
        (ds.width, "width"),
        (ds.classes, "class count"),
    ] {
        out.extend_from_slice(&u16_field(v, what)?.to_le_bytes());
    }
    let count = u32::try_from(ds.len()).map_err(|_| Error::Format("too many samples".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (i, s) in ds.samples.iter().enumerate() {
        if s.label as usize >= ds.classes {
            return Err(Error::Format(format!("sample {i} label {} >= {}", s.label, ds.classes)));
        }
        if s.views.len() != ds.views || s.views.iter().any(|v| v.len() != hw) {
            return Err(Error::Format(format!("sample {i} does not match the declared shape")));
        }
        out.push(s.label);
        for v in &s.views {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: String| Error::Format(m);
    if bytes.len() < HEADER_LEN || &bytes[..4] != DATASET_MAGIC {
        return Err(bad("not a dataset file (bad magic or short header)".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported dataset version {version}")));
    }
    let (views, height, width, classes) = (u16_at(6), u16_at(8), u16_at(10), u16_at(12));
    let count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let hw = height * width;
    let per_sample = 1 + 4 * views * hw;
    let expected = count
        .checked_mul(per_sample)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("declared size overflows".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header declares {expected}",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(count);
    for rec in bytes[HEADER_LEN..].chunks_exact(per_sample) {
        let label = rec[0];
        if label as usize >= classes {
            return Err(bad(format!("label {label} >= class count {classes}")));
        }
        let values: Vec<f32> = rec[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Sample {
            label,
            views: values.chunks(hw.max(1)).take(views).map(<[f32]>::to_vec).collect(),
        });
    }
    Ok(Dataset {
        views,
        height,
        width,
        classes,
        samples,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<Vec<u8>> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
