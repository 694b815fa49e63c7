//! Self-describing binary checkpoints.
//!
//! Layout: magic `TTCK`, format version, a JSON header (configuration,
//! augmentation-policy hash, training step, parameter names and shapes),
//! the raw little-endian `f64` payload in header order, and a trailing
//! SHA-256 of everything before it. Round trips are bit-exact.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{NamedParam, Network, NetworkConfig};

const MAGIC: &[u8; 4] = b"TTCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config mismatch: expected {expected} preset, file holds {found}")]
    ConfigMismatch { expected: String, found: String },
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    policy_hash: String,
    train_steps: u64,
    params: Vec<ParamMeta>,
}

/// Writes the network to `path`.
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let header = Header {
        config: net.config().clone(),
        policy_hash: net.policy_hash().to_string(),
        train_steps: net.train_steps(),
        params: net
            .params()
            .iter()
            .map(|p| ParamMeta {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let payload_len: usize = net.params().iter().map(|p| p.value.len() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload_len + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in net.params() {
        for &v in p.value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a network back, verifying integrity and shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, CheckpointError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 48 {
        return Err(CheckpointError::Corrupt(
            "file shorter than any valid checkpoint".into(),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("slice of 4"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let body_len = bytes.len() - 32;
    let (body, stored_digest) = bytes.split_at(body_len);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(CheckpointError::Corrupt(
            "integrity hash does not match contents".into(),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("slice of 8")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= body_len)
        .ok_or_else(|| CheckpointError::Corrupt("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Corrupt(format!("header does not parse: {e}")))?;

    let mut offset = header_end;
    let mut params = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        let count: usize = meta.shape.iter().product();
        let end = offset + count * 8;
        if end > body_len {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {} extends past payload",
                meta.name
            )));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in bytes[offset..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
        }
        let value = ArrayD::from_shape_vec(IxDyn(&meta.shape), values)
            .map_err(|e| CheckpointError::Corrupt(format!("parameter {}: {e}", meta.name)))?;
        params.push(NamedParam {
            name: meta.name.clone(),
            value,
        });
        offset = end;
    }
    if offset != body_len {
        return Err(CheckpointError::Corrupt(
            "trailing bytes after last parameter".into(),
        ));
    }
    Ok(Network::from_parts(
        header.config,
        params,
        header.train_steps,
        header.policy_hash,
    ))
}

/// Like [`load_checkpoint`], but additionally requires the stored
/// configuration to equal `expected`.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &NetworkConfig,
) -> Result<Network, CheckpointError> {
    let net = load_checkpoint(path)?;
    if net.config() != expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: expected.backbone.preset.clone(),
            found: net.config().backbone.preset.clone(),
        });
    }
    Ok(net)
}
