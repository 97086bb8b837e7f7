//! Binary model files.
//!
//! Layout: the 8-byte magic `PARCRFMD`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! every tensor as little-endian `f64` values in manifest order. The
//! manifest carries the configuration, both vocabularies, each tensor's
//! name, shape and offset, and an FNV-1a hash of the payload.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parcrf_core::model::ConfigError;
use parcrf_core::{DecoderKind, EncoderConfig, EncoderKind, LabelVocab, ModelBundle, ParamName, Params, Tensor, Vocab};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PARCRFMD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("model manifest is malformed: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("model file is corrupt: {0}")]
    Integrity(String),
    #[error("model is inconsistent: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    encoder: String,
    embedding_dim: usize,
    hidden_dim: usize,
    kernel_width: usize,
    decoder: String,
    iterations: usize,
    words: Vec<String>,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
    payload_values: usize,
    payload_fnv1a: String,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn to_bytes(model: &ModelBundle) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.as_str().to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        encoder: model.encoder.kind.as_str().to_string(),
        embedding_dim: model.encoder.embedding_dim,
        hidden_dim: model.encoder.hidden_dim,
        kernel_width: model.encoder.kernel_width,
        decoder: model.decoder.as_str().to_string(),
        iterations: model.iterations,
        words: model.words.items().to_vec(),
        labels: model.labels.labels().to_vec(),
        tensors,
        payload_values: offset,
        payload_fnv1a: format!("{:016x}", fnv1a(&payload)),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], ModelIoError> {
    if bytes.len() < n {
        return Err(ModelIoError::Truncated);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<ModelBundle, ModelIoError> {
    let magic = take(&mut bytes, 8).map_err(|_| ModelIoError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelIoError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| ModelIoError::Truncated)?;
    let manifest: Manifest = serde_json::from_slice(take(&mut bytes, len)?)?;
    let payload_len = manifest
        .payload_values
        .checked_mul(8)
        .ok_or_else(|| ModelIoError::Integrity("payload size overflows".into()))?;
    if bytes.len() < payload_len {
        return Err(ModelIoError::Truncated);
    }
    if bytes.len() > payload_len {
        return Err(ModelIoError::Integrity(format!("{} trailing bytes", bytes.len() - payload_len)));
    }
    if format!("{:016x}", fnv1a(bytes)) != manifest.payload_fnv1a {
        return Err(ModelIoError::Integrity("payload checksum mismatch".into()));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let kind: EncoderKind = manifest.encoder.parse()?;
    let decoder: DecoderKind = manifest.decoder.parse()?;
    let words = Vocab::from_items(manifest.words).map_err(|e| ModelIoError::Integrity(e.to_string()))?;
    let labels = LabelVocab::from_labels(manifest.labels).map_err(|e| ModelIoError::Integrity(e.to_string()))?;
    let encoder = EncoderConfig {
        kind,
        embedding_dim: manifest.embedding_dim,
        hidden_dim: manifest.hidden_dim,
        kernel_width: manifest.kernel_width,
        label_count: labels.len(),
        vocab_size: words.len(),
    };
    encoder.validate()?;
    let mut params = Params {
        embedding: Tensor::zeros(&[0]),
        encoder: Tensor::zeros(&[0]),
        emission: Tensor::zeros(&[0]),
        transition: Tensor::zeros(&[0]),
        transition2: Tensor::zeros(&[0]),
    };
    let mut seen = Vec::new();
    for entry in manifest.tensors {
        let name = ParamName::parse(&entry.name).ok_or_else(|| ModelIoError::Integrity(format!("unknown tensor {:?}", entry.name)))?;
        if seen.contains(&name) {
            return Err(ModelIoError::Integrity(format!("tensor {:?} appears twice", entry.name)));
        }
        seen.push(name);
        let count: usize = entry.shape.iter().product();
        let end = entry
            .offset
            .checked_add(count)
            .filter(|&e| e <= values.len())
            .ok_or_else(|| ModelIoError::Integrity(format!("tensor {:?} extends past the payload", entry.name)))?;
        *params.get_mut(name) =
            Tensor::new(entry.shape, values[entry.offset..end].to_vec()).map_err(|e| ModelIoError::Integrity(e.to_string()))?;
    }
    if seen.len() != ParamName::ALL.len() {
        return Err(ModelIoError::Integrity("missing tensors".into()));
    }
    let bundle = ModelBundle {
        encoder,
        decoder,
        iterations: manifest.iterations,
        params,
        words,
        labels,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_model(path: &Path, model: &ModelBundle) -> Result<(), ModelIoError> {
    let wrap = |source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(wrap)?;
    f.write_all(&to_bytes(model)).map_err(wrap)?;
    f.flush().map_err(wrap)
}

pub fn load_model(path: &Path) -> Result<ModelBundle, ModelIoError> {
    let bytes = fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
