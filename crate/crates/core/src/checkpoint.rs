//! Self-describing binary container for trained models.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, the JSON
//! header, every parameter value as little-endian `f64` in header order,
//! and a SHA-256 digest of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch::EntityIndex;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SerModel};
use crate::variant::Variant;
use ser_autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"SERCKPT\x01";
const FORMAT: &str = "ser-checkpoint/1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    model: ModelConfig,
    variant: Variant,
    entities: [EntityIndex; 2],
    vocab_hash: String,
    params: Vec<ParamEntry>,
    run_config: serde_json::Value,
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SerModel,
    /// Hash of the embedding vocabulary the model was trained with.
    pub vocab_hash: String,
    /// Echo of the run configuration.
    pub run_config: serde_json::Value,
}

pub fn encode(model: &SerModel, vocab_hash: &str, run_config: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        model: model.config.clone(),
        variant: model.variant,
        entities: model.entities.clone(),
        vocab_hash: vocab_hash.into(),
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        run_config: run_config.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + model.store.numel() * 8 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(bad(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("digest mismatch (file corrupted or truncated)"));
    }
    let len_bytes: [u8; 8] = body[8..16].try_into().expect("eight bytes");
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| bad("header length overflows"))?;
    let rest = &body[16..];
    if header_len > rest.len() {
        return Err(bad("header length exceeds file"));
    }
    let (json, payload) = rest.split_at(header_len);
    let mut header: Header =
        serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("unknown format `{}`", header.format)));
    }
    header
        .model
        .validate()
        .map_err(|e| bad(format!("model config: {e}")))?;
    for e in &mut header.entities {
        e.rebuild();
    }

    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let stored = payload.len() / 8;
    let listed = header.params.iter().try_fold(0usize, |acc, p| {
        p.shape
            .iter()
            .try_fold(1usize, |n, &d| n.checked_mul(d))
            .and_then(|n| acc.checked_add(n))
    });
    let expected = header.model.param_count(&header.entities);
    if listed != Some(stored) || expected != Some(stored) {
        return Err(bad(format!(
            "parameter count mismatch: payload {stored}, header {listed:?}, config {expected:?}"
        )));
    }

    let mut model = SerModel::new(header.model.clone(), header.variant, header.entities, 0.0, 0)
        .map_err(|e| bad(e.to_string()))?;
    let ids: Vec<_> = model.store.ids().collect();
    if ids.len() != header.params.len() {
        return Err(bad("parameter list does not match model layout"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")));
    for (id, entry) in ids.into_iter().zip(&header.params) {
        if model.store.name(id) != entry.name || model.store.value(id).shape() != entry.shape {
            return Err(bad(format!(
                "parameter `{}` {:?} does not match model layout",
                entry.name, entry.shape
            )));
        }
        let n = model.store.value(id).len();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("parameter `{}` holds non-finite values", entry.name)));
        }
        model.store.set_value(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(Checkpoint {
        model,
        vocab_hash: header.vocab_hash,
        run_config: header.run_config,
    })
}

pub fn save(path: &Path, model: &SerModel, vocab_hash: &str, run_config: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(model, vocab_hash, run_config)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Checkpoint {
    /// Reject a checkpoint used with a different embedding table.
    pub fn check_vocab(&self, vocab_hash: &str, dim: usize) -> Result<()> {
        if self.model.config.emb_dim != dim {
            return Err(Error::InvalidArgument(format!(
                "checkpoint expects {}-dimensional embeddings, table has {dim}",
                self.model.config.emb_dim
            )));
        }
        if self.vocab_hash != vocab_hash {
            return Err(Error::InvalidArgument(format!(
                "vocabulary hash mismatch: checkpoint {}, table {vocab_hash}",
                self.vocab_hash
            )));
        }
        Ok(())
    }
}
