//! JSON model files: vocabulary, scoring config and little-endian f64
//! matrices in base64, guarded by a version field and a sha256 checksum.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::model::{DualEncoderModel, Params, ScoringConfig, SubtokenVocab};
use crate::io::write_atomic;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unsupported model format version {found} (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checksum mismatch: file is corrupted")]
    Checksum,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Matrices {
    code_embeddings: String,
    name_embeddings: String,
    code_projection: String,
    name_projection: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dim: usize,
    vocab_size: usize,
    log_tau: f64,
    scoring: ScoringConfig,
    vocab: Vec<String>,
    matrices: Matrices,
    checksum: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, PersistError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| PersistError::Malformed(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(PersistError::Shape(format!(
            "{what} holds {} values, expected {expected}",
            bytes.len() / 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn checksum(file: &ModelFile) -> String {
    let mut h = Sha256::new();
    h.update(file.format_version.to_le_bytes());
    h.update((file.dim as u64).to_le_bytes());
    h.update((file.vocab_size as u64).to_le_bytes());
    h.update(file.log_tau.to_le_bytes());
    h.update(serde_json::to_vec(&file.scoring).unwrap());
    for t in &file.vocab {
        h.update(t.as_bytes());
        h.update([0]);
    }
    for m in [
        &file.matrices.code_embeddings,
        &file.matrices.name_embeddings,
        &file.matrices.code_projection,
        &file.matrices.name_projection,
    ] {
        h.update(m.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub fn model_to_json(model: &DualEncoderModel) -> String {
    let p = &model.params;
    let mut file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dim: p.dim,
        vocab_size: p.vocab_size,
        log_tau: p.log_tau,
        scoring: model.scoring,
        vocab: model.vocab.tokens().to_vec(),
        matrices: Matrices {
            code_embeddings: encode(&p.code_embeddings),
            name_embeddings: encode(&p.name_embeddings),
            code_projection: encode(&p.code_projection),
            name_projection: encode(&p.name_projection),
        },
        checksum: String::new(),
    };
    file.checksum = checksum(&file);
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<DualEncoderModel, PersistError> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PersistError::Malformed(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| PersistError::Malformed("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(PersistError::Version {
            found: version as u32,
        });
    }
    let file: ModelFile =
        serde_json::from_value(raw).map_err(|e| PersistError::Malformed(e.to_string()))?;
    if checksum(&file) != file.checksum {
        return Err(PersistError::Checksum);
    }
    if file.vocab.len() != file.vocab_size {
        return Err(PersistError::Shape(format!(
            "vocabulary has {} tokens, header says {}",
            file.vocab.len(),
            file.vocab_size
        )));
    }
    if file.dim == 0 {
        return Err(PersistError::Shape("dimension is zero".into()));
    }
    let (v, d) = (file.vocab_size, file.dim);
    let params = Params {
        vocab_size: v,
        dim: d,
        code_embeddings: decode(&file.matrices.code_embeddings, v * d, "code_embeddings")?,
        name_embeddings: decode(&file.matrices.name_embeddings, v * d, "name_embeddings")?,
        code_projection: decode(&file.matrices.code_projection, d * d, "code_projection")?,
        name_projection: decode(&file.matrices.name_projection, d * d, "name_projection")?,
        log_tau: file.log_tau,
    };
    Ok(DualEncoderModel {
        vocab: SubtokenVocab::from_tokens(file.vocab),
        params,
        scoring: file.scoring,
    })
}

pub fn save_model(model: &DualEncoderModel, path: &Path) -> Result<(), PersistError> {
    write_atomic(path, model_to_json(model).as_bytes()).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<DualEncoderModel, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_json(&text)
}

/// Loads a model and checks its embedding width.
pub fn load_model_expecting(path: &Path, dim: usize) -> Result<DualEncoderModel, PersistError> {
    let model = load_model(path)?;
    if model.dim() != dim {
        return Err(PersistError::Shape(format!(
            "model dimension {} but {dim} expected",
            model.dim()
        )));
    }
    Ok(model)
}
