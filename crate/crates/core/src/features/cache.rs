//! On-disk cache for extracted feature matrices.
//!
//! Layout (little-endian): magic `R2FC`, format version u32, kind tag u8,
//! bins u32, frames u32, front-end config hash u64, then `bins*frames`
//! f32 values column-major by frame. The embedded config hash is checked
//! against the current front-end parameterization on load, so caches
//! written under different constants read back as "stale" errors instead
//! of silently wrong features.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"R2FC";
const VERSION: u32 = 1;

/// Serialize a feature matrix to cache bytes.
pub fn encode_feature(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + m.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(m.kind.tag());
    out.extend_from_slice(&(m.bins as u32).to_le_bytes());
    out.extend_from_slice(&(m.frames as u32).to_le_bytes());
    out.extend_from_slice(&m.kind.config_hash().to_le_bytes());
    for v in &m.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("feature cache: truncated"))?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deserialize cache bytes, rejecting corrupt or stale content.
pub fn decode_feature(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::data("feature cache: bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "feature cache: unsupported version {version}"
        )));
    }
    let kind = FeatureKind::from_tag(r.u8()?)?;
    let bins = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let stored_hash = r.u64()?;
    if stored_hash != kind.config_hash() {
        return Err(Error::data(format!(
            "feature cache: stale {} cache (config changed); re-extract",
            kind.name()
        )));
    }
    if bins != kind.bins() {
        return Err(Error::data(format!(
            "feature cache: {} expects {} bins, file has {bins}",
            kind.name(),
            kind.bins()
        )));
    }
    let numel = bins
        .checked_mul(frames)
        .ok_or_else(|| Error::data("feature cache: dimension overflow"))?;
    let data = r.take(numel * 4)?;
    if r.at != bytes.len() {
        return Err(Error::data("feature cache: trailing bytes"));
    }
    let values = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(kind, bins, frames, values)
}

/// Write a feature matrix to `path` atomically.
pub fn save_feature(path: &Path, m: &FeatureMatrix) -> Result<()> {
    atomic_write(path, &encode_feature(m))
}

/// Read a feature matrix previously written by [`save_feature`].
pub fn load_feature(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_feature(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
