//! Model checkpoints.
//!
//! ```text
//! b"ILRM" | u32 version | u64 header_len | header (UTF-8 JSON)
//! every trainable tensor as f64 LE, in declaration order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{IlrError, Result};
use crate::numerics::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ILRM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensor_names: Vec<String>,
    pub tensor_lens: Vec<usize>,
    /// Free-form run information (training config, best epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real>(params: &ModelParams<T>, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        tensor_names: params.tensor_names(),
        tensor_lens: params.tensors().iter().map(|t| t.len()).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| IlrError::format("header", e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors() {
        for x in t {
            w.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode<T: Real>(bytes: &[u8]) -> Result<(ModelParams<T>, CheckpointHeader)> {
    if bytes.len() < 16 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(IlrError::format("magic", "not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(IlrError::format("version", format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(IlrError::format("header_len", "header extends past end of file"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| IlrError::format("header", e.to_string()))?;
    let mut params = ModelParams::<T>::zeros(&header.config).map_err(|e| IlrError::format("config", e.to_string()))?;
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if lens != header.tensor_lens || params.tensor_names() != header.tensor_names {
        return Err(IlrError::format("tensor_lens", "tensor layout does not match the config"));
    }
    let payload = &body[header_len..];
    if payload.len() != params.param_count() * 8 {
        return Err(IlrError::format(
            "tensor_lens",
            format!("{} payload bytes for {} parameters", payload.len(), params.param_count()),
        ));
    }
    let flat: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    params.assign_flat(&flat)?;
    Ok((params, header))
}
