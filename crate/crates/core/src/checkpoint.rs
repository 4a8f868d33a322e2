//! Binary checkpoint format for model weights, batch-norm running
//! statistics and (optionally) optimizer moments.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4  b"R2NS"
//! version u32   currently 1
//! config  u64   hash of the model configuration (see ModelConfig)
//! dtype   u8    element size in bytes: 4 = f32, 8 = f64
//! step    u64   optimizer step count at save time
//! count   u32   number of named arrays
//! array*  { name_len u32, name utf-8, ndim u32, dim u32 * ndim,
//!           data dtype_bytes * prod(dims) }
//! ```
//!
//! Optimizer first/second moments are stored alongside the weights under
//! `<param>.adam_m` / `<param>.adam_v`. Loading into a model whose config
//! hash differs is an error — a checkpoint is only meaningful for the exact
//! architecture (and feature front-end) it was trained with.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Restore, Snapshot};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::atomic_write;

pub const MAGIC: [u8; 4] = *b"R2NS";
pub const VERSION: u32 = 1;

/// Suffixes for optimizer moment arrays.
pub const ADAM_M_SUFFIX: &str = ".adam_m";
pub const ADAM_V_SUFFIX: &str = ".adam_v";

/// Names of the one-element metadata arrays recording which front-end a
/// model was trained on: the feature kind's tag and the frame count.
pub const META_FEATURE: &str = "meta.feature";
pub const META_FRAMES: &str = "meta.frames";

/// Named arrays as they appear in a checkpoint: `(name, tensor)` pairs.
pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

/// Decoded checkpoint contents.
pub struct CheckpointData<T> {
    pub config_hash: u64,
    pub step: u64,
    pub tensors: NamedTensors<T>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serialize named tensors with the header fields.
pub fn encode<T: Scalar>(
    config_hash: u64,
    step: u64,
    tensors: &[(String, Tensor<T>)],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, config_hash);
    out.push(T::BYTES as u8);
    put_u64(&mut out, step);
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::config("checkpoint: too many arrays"))?;
    put_u32(&mut out, count);
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        put_u32(&mut out, name_bytes.len() as u32);
        out.extend_from_slice(name_bytes);
        put_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.shape() {
            let dim = u32::try_from(d)
                .map_err(|_| Error::config(format!("checkpoint: dimension {d} too large")))?;
            put_u32(&mut out, dim);
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Cursor-style reader with bounds checking.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data("checkpoint: truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<CheckpointData<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::data("checkpoint: bad magic (not a checkpoint file)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "checkpoint: unsupported version {version} (expected {VERSION})"
        )));
    }
    let config_hash = r.u64()?;
    let dtype = r.take(1)?[0] as usize;
    if dtype != T::BYTES {
        return Err(Error::data(format!(
            "checkpoint: stored element size {dtype} bytes, requested {}",
            T::BYTES
        )));
    }
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(Error::data("checkpoint: implausible name length"));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::data("checkpoint: array name is not utf-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(Error::data("checkpoint: implausible rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::data("checkpoint: shape overflow"))?;
            shape.push(d);
        }
        let raw = r.take(numel * T::BYTES)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::data("checkpoint: trailing bytes after last array"));
    }
    Ok(CheckpointData {
        config_hash,
        step,
        tensors,
    })
}

/// Read only the model-config hash from a checkpoint header, without
/// decoding the arrays. Lets callers pick the matching architecture
/// before committing to a full load.
pub fn peek_config_hash(bytes: &[u8]) -> Result<u64> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::data("checkpoint: bad magic (not a checkpoint file)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "checkpoint: unsupported version {version} (expected {VERSION})"
        )));
    }
    r.u64()
}

/// Write a model checkpoint: all parameters and buffers, plus any extra
/// arrays (optimizer moments), atomically.
pub fn save_model<T: Scalar>(
    path: &Path,
    model: &mut Model<T>,
    extras: &[(String, Tensor<T>)],
    step: u64,
) -> Result<()> {
    let mut snapshot = Snapshot::default();
    model.visit(&mut snapshot);
    let mut tensors = snapshot.tensors;
    tensors.extend(extras.iter().cloned());
    let bytes = encode(model.config.config_hash(), step, &tensors)?;
    atomic_write(path, &bytes)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a checkpoint into `model`, verifying the config hash. Returns the
/// stored step and any arrays that are not model parameters or buffers
/// (e.g. optimizer moments), for the caller to reuse.
pub fn load_model<T: Scalar>(path: &Path, model: &mut Model<T>) -> Result<(u64, NamedTensors<T>)> {
    let data = decode::<T>(&read_file(path)?)?;
    let expected = model.config.config_hash();
    if data.config_hash != expected {
        return Err(Error::data(format!(
            "checkpoint config hash {:016x} does not match model config {:016x}",
            data.config_hash, expected
        )));
    }
    let mut restore = Restore::new(&data.tensors);
    model.visit(&mut restore);
    if !restore.missing.is_empty() {
        return Err(Error::data(format!(
            "checkpoint is missing arrays: {:?}",
            restore.missing
        )));
    }
    // Everything the model did not consume is an extra (optimizer state).
    let mut model_names = std::collections::HashSet::new();
    let mut snapshot = Snapshot::<T>::default();
    model.visit(&mut snapshot);
    for (name, _) in &snapshot.tensors {
        model_names.insert(name.clone());
    }
    let extras = data
        .tensors
        .into_iter()
        .filter(|(name, _)| !model_names.contains(name))
        .collect();
    Ok((data.step, extras))
}
