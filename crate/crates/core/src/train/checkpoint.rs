//! Checkpoint layout: an 8-byte little-endian header length, a JSON header,
//! then every tensor as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ModelConfig, MODEL_FORMAT_VERSION};
use crate::data::Vocab;
use crate::model::Model;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "msynfd-checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("config hash mismatch: checkpoint {stored}, expected {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("checkpoint format version {0} is not supported (expected {MODEL_FORMAT_VERSION})")]
    Version(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the payload, in `f64` elements.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub magic: String,
    pub format_version: u32,
    pub config: String,
    pub config_hash: String,
    pub vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model, vocab: &Vocab) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            offset,
            trainable: p.trainable,
        });
        offset += p.value.len();
        for x in p.value.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let config = model.config.to_text();
    let header = CheckpointHeader {
        magic: CHECKPOINT_MAGIC.into(),
        format_version: MODEL_FORMAT_VERSION,
        config_hash: config_hash(&config),
        config,
        vocab: vocab.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn save(path: &Path, model: &Model, vocab: &Vocab) -> Result<(), CheckpointError> {
    Ok(fs::write(path, to_bytes(model, vocab))?)
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), CheckpointError> {
    let bad = |m: &str| CheckpointError::Format(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated length prefix"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    Ok((header, &bytes[8 + len..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, Vocab), CheckpointError> {
    let (header, payload) = read_header(bytes)?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    let computed = config_hash(&header.config);
    if computed != header.config_hash {
        return Err(CheckpointError::HashMismatch {
            stored: header.config_hash,
            computed,
        });
    }
    let config = ModelConfig::from_text(&header.config).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if payload.len() % 8 != 0 {
        return Err(CheckpointError::Format("payload is not a whole number of f64".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let read = |e: &TensorEntry| -> Result<Tensor, CheckpointError> {
        let slice = values
            .get(e.offset..e.offset + e.rows * e.cols)
            .ok_or_else(|| CheckpointError::Format(format!("tensor {} out of bounds", e.name)))?;
        Tensor::new(e.rows, e.cols, slice.to_vec()).map_err(|err| CheckpointError::Format(err.to_string()))
    };
    let emb = header
        .tensors
        .iter()
        .find(|e| e.name == "embedding")
        .ok_or_else(|| CheckpointError::Format("missing embedding".into()))?;
    let vectors = (!emb.trainable).then(|| read(emb)).transpose()?;
    let mut model = Model::new(config, emb.rows, vectors).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if model.store.len() != header.tensors.len() {
        return Err(CheckpointError::Format(format!(
            "{} tensors stored, model has {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for e in &header.tensors {
        let id = model
            .store
            .id(&e.name)
            .ok_or_else(|| CheckpointError::Format(format!("unknown tensor {}", e.name)))?;
        let t = read(e)?;
        if t.shape() != model.store.get(id).shape() {
            return Err(CheckpointError::Format(format!("shape mismatch for {}", e.name)));
        }
        *model.store.get_mut(id) = t;
    }
    Ok((model, header.vocab))
}

pub fn load(path: &Path) -> Result<(Model, Vocab), CheckpointError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EmbeddingMode;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            heads: 2,
            d_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = Model::new(small(), 7, None).unwrap();
        let mut v = Vocab::default();
        v.insert("x");
        let bytes = to_bytes(&m, &v);
        let (m2, v2) = from_bytes(&bytes).unwrap();
        assert_eq!(m2.store, m.store);
        assert_eq!(m2.config, m.config);
        assert_eq!(v2, v);
    }

    #[test]
    fn external_table_is_restored_frozen() {
        let mut c = small();
        c.embedding = EmbeddingMode::External;
        let m = Model::new(c, 5, Some(Tensor::filled(5, 4, 0.25))).unwrap();
        let (m2, _) = from_bytes(&to_bytes(&m, &Vocab::default())).unwrap();
        assert_eq!(m2.store, m.store);
    }

    #[test]
    fn tampered_config_is_rejected() {
        let m = Model::new(small(), 7, None).unwrap();
        let bytes = to_bytes(&m, &Vocab::default());
        let (mut header, payload) = read_header(&bytes).unwrap();
        header.config = header.config.replace("hops = 3", "hops = 4");
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = (json.len() as u64).to_le_bytes().to_vec();
        forged.extend_from_slice(&json);
        forged.extend_from_slice(payload);
        assert!(matches!(from_bytes(&forged), Err(CheckpointError::HashMismatch { .. })));
        assert!(matches!(from_bytes(&bytes[..5]), Err(CheckpointError::Format(_))));
    }
}
