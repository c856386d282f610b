//! Binary checkpoint format for model weights.
//!
//! Layout: magic "ROOF", format version, a digest of the model config, a
//! tensor manifest (name, group, shape), raw little-endian f64 data in
//! manifest order, and a trailing SHA-256 over everything before it. A
//! checkpoint only loads into a model built from the identical config.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Group, ModelConfig, ModelError, RoofModel};
use crate::tensor::TensorError;

const MAGIC: &[u8; 4] = b"ROOF";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint does not match config: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Serializes the model's weights. Deterministic for a given model state:
/// the manifest order is the model's own named-tensor order.
pub fn encode(model: &RoofModel) -> Vec<u8> {
    let named = model.weights.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.cfg.digest());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, group, tensor) in &named {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(group.to_byte());
        out.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
    }
    for (_, _, tensor) in &named {
        for v in tensor.to_vec() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    out
}

pub fn save(model: &RoofModel, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(model))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

struct ManifestEntry {
    name: String,
    group: Group,
    rows: usize,
    cols: usize,
}

/// Rebuilds a model from `cfg` and loads the checkpoint's weights into it.
/// Fails if the checkpoint was written under any other config.
pub fn decode(bytes: &[u8], cfg: ModelConfig) -> Result<RoofModel, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 32 + 4 + 32 {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    let (body, stored_sum) = bytes.split_at(bytes.len() - 32);
    let actual = Sha256::digest(body);
    if actual.as_slice() != stored_sum {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported format version {version}"
        )));
    }
    let digest = cur.take(32)?;
    if digest != cfg.digest() {
        return Err(CheckpointError::ConfigMismatch(
            "config digest differs from the one the checkpoint was saved with".into(),
        ));
    }

    let count = cur.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("manifest name is not utf-8".into()))?
            .to_string();
        let group = Group::from_byte(cur.u8()?)
            .ok_or_else(|| CheckpointError::Corrupt(format!("bad group byte for {name}")))?;
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        manifest.push(ManifestEntry { name, group, rows, cols });
    }

    let model = RoofModel::init(cfg, 0)?;
    let named = model.weights.named_tensors();
    if named.len() != manifest.len() {
        return Err(CheckpointError::ConfigMismatch(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.len(),
            named.len()
        )));
    }
    let mut by_name: HashMap<&str, (Group, &crate::tensor::Tensor)> = HashMap::new();
    for (name, group, tensor) in &named {
        by_name.insert(name.as_str(), (*group, tensor));
    }

    for entry in &manifest {
        let Some(&(group, tensor)) = by_name.get(entry.name.as_str()) else {
            return Err(CheckpointError::ConfigMismatch(format!(
                "checkpoint tensor {} not present in model",
                entry.name
            )));
        };
        if group != entry.group {
            return Err(CheckpointError::ConfigMismatch(format!(
                "tensor {} belongs to group {}, checkpoint says {}",
                entry.name,
                group.name(),
                entry.group.name()
            )));
        }
        if (tensor.rows(), tensor.cols()) != (entry.rows, entry.cols) {
            return Err(CheckpointError::ConfigMismatch(format!(
                "tensor {} has shape {}x{}, checkpoint says {}x{}",
                entry.name,
                tensor.rows(),
                tensor.cols(),
                entry.rows,
                entry.cols
            )));
        }
        let n = entry.rows * entry.cols;
        let raw = cur.take(n * 8)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        tensor.set_data(&data)?;
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after tensor data",
            body.len() - cur.pos
        )));
    }
    Ok(model)
}

pub fn load(path: &Path, cfg: ModelConfig) -> Result<RoofModel, CheckpointError> {
    let bytes = fs::read(path)?;
    decode(&bytes, cfg)
}
