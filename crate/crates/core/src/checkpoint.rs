//! Model checkpoints: magic `SZOO`, version, config JSON, named f32 tensors,
//! trailing CRC-32 over everything before it.
//!
//! The CRC is verified over the whole file before any parsing, so every
//! single-byte corruption is rejected regardless of which field it hits.
//! Weights round-trip bit-exactly; models in f64 verification mode are
//! stored in f32 (the production precision).

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::arch::{ConfigError, Model, ModelConfig};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SZOO";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const POLY: u32 = 0xEDB8_8320;
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, e) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { POLY ^ (c >> 1) } else { c >> 1 };
            }
            *e = c;
        }
        t
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// Serializes a model (config + named tensors) into checkpoint bytes.
pub fn checkpoint_bytes<E: Scalar>(model: &Model<E>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for entry in model.params.entries() {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(entry.trainable as u8);
        out.push(entry.shape.len() as u8);
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &entry.data {
            out.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint<E: Scalar>(model: &Model<E>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

/// Rebuilds a model from checkpoint bytes; every stored tensor must match a
/// parameter of the rebuilt architecture by name and shape.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model<f32>, CheckpointError> {
    if bytes.len() < 10 {
        return Err(CheckpointError::Format("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > body.len() {
            return Err(CheckpointError::Format("truncated body".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic: [u8; 4] = take(&mut pos, 4)?.try_into().expect("4 bytes");
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig = serde_json::from_slice(take(&mut pos, config_len)?)
        .map_err(|e| CheckpointError::Format(format!("config: {e}")))?;
    let mut model = Model::<f32>::build(config, 0)?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    if count != model.params.len() {
        return Err(CheckpointError::Format(format!(
            "{count} tensors stored but the architecture has {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let _trainable = take(&mut pos, 1)?[0];
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, n * 4)?;
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| CheckpointError::Format(format!("unknown tensor {name:?}")))?;
        let entry = model.params.get_mut(id);
        if entry.shape != shape {
            return Err(CheckpointError::Format(format!(
                "tensor {name:?}: stored shape {shape:?} vs model {:?}",
                entry.shape
            )));
        }
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            entry.data[i] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if pos != body.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes after the last tensor",
            body.len() - pos
        )));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, CheckpointError> {
    model_from_bytes(&fs::read(path)?)
}
