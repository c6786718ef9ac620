//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PTCKPT\0\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     header, UTF-8 JSON (model config, vocab, layout manifest,
//!               step, Fisher step count, config digest, metric history)
//! 20+H    8n    theta, n f64 little-endian
//! ...     8n    Fisher sum of squared gradients, n f64 little-endian
//! ...     32    SHA-256 of every preceding byte
//! ```
//!
//! `n` is the header's `n_params`. Floats are stored as raw bits, so a
//! save/load/save cycle reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use patchtune_core::model::{layout_for, Checkpoint, EvalRecord, ModelConfig, TaggerModel, Vocab};
use patchtune_core::regularizers::{FisherAccumulator, Layout, ParamGroup, ParamVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"PTCKPT\0\0";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocab,
    layout: Vec<ParamGroup>,
    n_params: usize,
    step: u64,
    fisher_steps: u64,
    config_digest: String,
    history: Vec<EvalRecord>,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let theta = &ckpt.model.theta.values;
    let header = Header {
        model: ckpt.model.config,
        vocab: ckpt.model.vocab.clone(),
        layout: ckpt.model.layout().groups().to_vec(),
        n_params: theta.len(),
        step: ckpt.step,
        fisher_steps: ckpt.fisher.steps,
        config_digest: ckpt.config_digest.clone(),
        history: ckpt.history.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX + header.len() + 16 * theta.len() + DIGEST);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in theta.iter().chain(&ckpt.fisher.sum_sq) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREFIX + DIGEST {
        return Err(CheckpointError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or(CheckpointError::Truncated)?;
    let header: Header = serde_json::from_slice(&body[PREFIX..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let n = header.n_params;
    if body.len() - header_end != 16 * n {
        return Err(CheckpointError::Truncated);
    }
    let layout = layout_for(&header.model, &header.vocab);
    let named: Vec<(String, usize)> = header.layout.iter().map(|g| (g.name.clone(), g.len)).collect();
    if Layout::new(&named) != layout || layout.total_len() != n {
        return Err(CheckpointError::Header(
            "layout manifest does not match the model shape".into(),
        ));
    }
    let floats = read_f64s(&body[header_end..]);
    let (theta, sum_sq) = floats.split_at(n);
    let theta = ParamVector::from_values(layout, theta.to_vec())
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint {
        model: TaggerModel {
            config: header.model,
            vocab: header.vocab,
            theta,
        },
        fisher: FisherAccumulator {
            sum_sq: sum_sq.to_vec(),
            steps: header.fisher_steps,
        },
        step: header.step,
        config_digest: header.config_digest,
        history: header.history,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
