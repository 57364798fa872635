//! Checkpoint archive: one file holding the config record (JSON) plus all
//! named parameter arrays as raw little-endian f64, so identical training
//! runs produce byte-identical files.
//!
//! Layout: 8-byte magic `FTINCKP1`, u64-LE header length, JSON header
//! (config, free-form string metadata, tensor directory with element
//! offsets), then the concatenated tensor payload. Tensor names follow the
//! `stage.block.tensor` scheme from [`super::params::FtinParams::tensors`];
//! extra arrays (e.g. optimizer state) are stored under their own names.

use super::{FtinConfig, FtinParams, ModelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FTINCKP1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: FtinConfig,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub config: FtinConfig,
    pub params: FtinParams,
    pub meta: BTreeMap<String, String>,
    /// Arrays that are not model parameters (optimizer state and the like).
    pub extras: BTreeMap<String, Vec<f64>>,
}

/// Writes a checkpoint. `extras` may carry named auxiliary arrays.
pub fn save_checkpoint(
    path: &Path,
    config: &FtinConfig,
    params: &FtinParams,
    meta: &BTreeMap<String, String>,
    extras: &[(String, Vec<usize>, &[f64])],
) -> Result<(), ModelError> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, data: &[f64], payload: &mut Vec<u8>| {
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name,
            shape,
            offset,
            len: data.len(),
        });
        offset += data.len();
    };
    for t in params.tensors() {
        push(t.name, t.shape, t.data, &mut payload);
    }
    for (name, shape, data) in extras {
        push(name.clone(), shape.clone(), data, &mut payload);
    }
    let header = Header {
        version: 1,
        config: config.clone(),
        meta: meta.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ModelError::Checkpoint(format!("header encode failed: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    f.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint, rebuilding the parameter structure from its config
/// and filling every tensor by name.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| ModelError::Checkpoint(format!("header decode failed: {e}")))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let read_tensor = |entry: &TensorEntry| -> Result<Vec<f64>, ModelError> {
        let start = entry.offset * 8;
        let end = start + entry.len * 8;
        if end > payload.len() {
            return Err(ModelError::Checkpoint(format!(
                "tensor `{}` extends past end of file",
                entry.name
            )));
        }
        Ok(payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let by_name: BTreeMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t))
        .collect();
    let mut params = FtinParams::init(&header.config, 0)?;
    let mut used: Vec<&str> = Vec::new();
    for (name, slice) in params.tensors_mut() {
        let entry = by_name.get(name.as_str()).ok_or_else(|| {
            ModelError::Checkpoint(format!("checkpoint is missing tensor `{name}`"))
        })?;
        if entry.len != slice.len() {
            return Err(ModelError::Checkpoint(format!(
                "tensor `{name}` has {} elements, expected {}",
                entry.len,
                slice.len()
            )));
        }
        let data = read_tensor(entry)?;
        slice.copy_from_slice(&data);
        used.push(entry.name.as_str());
    }
    let mut extras = BTreeMap::new();
    for entry in &header.tensors {
        if !used.contains(&entry.name.as_str()) {
            extras.insert(entry.name.clone(), read_tensor(entry)?);
        }
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        meta: header.meta,
        extras,
    })
}
