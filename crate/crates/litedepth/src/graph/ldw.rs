//! `.ldw` weight container: one file carries the whole model.
//!
//! Layout: 8-byte magic `LDWMODEL`, a little-endian u32 manifest length, a
//! UTF-8 JSON manifest (graph topology, metadata and a tensor table), then
//! the raw little-endian f32 tensor payloads at the offsets the table
//! declares (relative to the end of the manifest).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

use super::{GraphError, GraphModel, ModelMetadata, Node};

pub const LDW_MAGIC: &[u8; 8] = b"LDWMODEL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LdwError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt header: bad magic")]
    BadMagic,
    #[error("corrupt header: declared manifest length {declared} exceeds file payload {available}")]
    TruncatedManifest { declared: usize, available: usize },
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor `{name}`: unsupported dtype `{dtype}`")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("tensor `{name}`: shape {shape:?} needs {expected} bytes, manifest declares {declared}")]
    ShapeSizeMismatch { name: String, shape: [usize; 4], expected: u64, declared: u64 },
    #[error("truncated tensor data for `{name}`: needs bytes {start}..{end}, payload has {available}")]
    TruncatedTensor { name: String, start: u64, end: u64, available: u64 },
    #[error("loaded graph fails validation: {0}")]
    Graph(#[from] GraphError),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: [usize; 4],
    offset: u64,
    len_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    input: String,
    output: String,
    metadata: ModelMetadata,
    nodes: Vec<Node>,
    tensors: Vec<TensorEntry>,
}

/// Serializes the model; `load_model(save_model(m))` reproduces `m` bit for
/// bit.
pub fn save_model(model: &GraphModel, path: &Path) -> Result<(), LdwError> {
    let mut tensors = Vec::with_capacity(model.weights.len());
    let mut offset = 0u64;
    for (name, t) in &model.weights {
        let len_bytes = (t.len() * 4) as u64;
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".to_string(),
            shape: t.shape(),
            offset,
            len_bytes,
        });
        offset += len_bytes;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        input: model.input.clone(),
        output: model.output.clone(),
        metadata: model.metadata.clone(),
        nodes: model.nodes.clone(),
        tensors,
    };
    let manifest_json = serde_json::to_vec(&manifest)?;

    let mut file = fs::File::create(path)?;
    file.write_all(LDW_MAGIC)?;
    file.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    file.write_all(&manifest_json)?;
    for t in model.weights.values() {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GraphModel, LdwError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != LDW_MAGIC {
        return Err(LdwError::BadMagic);
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if manifest_len > rest.len() {
        return Err(LdwError::TruncatedManifest { declared: manifest_len, available: rest.len() });
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..manifest_len])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LdwError::UnsupportedVersion(manifest.format_version));
    }
    let payload = &rest[manifest_len..];

    let mut weights = BTreeMap::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(LdwError::UnsupportedDtype {
                name: entry.name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        let expected = (entry.shape.iter().product::<usize>() * 4) as u64;
        if expected != entry.len_bytes {
            return Err(LdwError::ShapeSizeMismatch {
                name: entry.name.clone(),
                shape: entry.shape,
                expected,
                declared: entry.len_bytes,
            });
        }
        let start = entry.offset;
        let end = entry.offset + entry.len_bytes;
        if end > payload.len() as u64 {
            return Err(LdwError::TruncatedTensor {
                name: entry.name.clone(),
                start,
                end,
                available: payload.len() as u64,
            });
        }
        let slice = &payload[start as usize..end as usize];
        let data: Vec<f32> = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(entry.shape, data).expect("length checked above");
        weights.insert(entry.name.clone(), tensor);
    }

    let model = GraphModel {
        nodes: manifest.nodes,
        weights,
        input: manifest.input,
        output: manifest.output,
        metadata: manifest.metadata,
    };
    model.validate()?;
    Ok(model)
}
