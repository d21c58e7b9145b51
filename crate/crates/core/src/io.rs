//! Model checkpoints: `checkpoint.json` plus a `params.bin` blob of
//! little-endian doubles, one contiguous range per named parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::JNetConfig;
use crate::propagator::{ModelSetup, NeuralPropagator};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset in doubles.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: JNetConfig,
    pub setup: ModelSetup,
    pub init_seed: u64,
    /// Free-form training provenance.
    pub provenance: serde_json::Value,
    pub params: Vec<ParamEntry>,
    pub blob_sha256: String,
    pub trainable_checksum: String,
}

pub fn save_checkpoint(dir: &Path, model: &NeuralPropagator, init_seed: u64, provenance: serde_json::Value) -> Result<CheckpointManifest> {
    let net = model
        .net()
        .ok_or_else(|| Error::Usage("only network propagators have checkpoints".into()))?;
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut params = Vec::new();
    let mut offset = 0;
    for p in net.params.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            trainable: p.trainable,
            offset,
            len: p.data.len(),
        });
        offset += p.data.len();
        p.data.iter().for_each(|v| blob.extend_from_slice(&v.to_le_bytes()));
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        architecture: net.config().clone(),
        setup: model.setup,
        init_seed,
        provenance,
        params,
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        trainable_checksum: net.params.checksum(true),
    };
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    fs::write(dir.join(CHECKPOINT_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Rebuilds the propagator and verifies both checksums.
pub fn load_checkpoint(dir: &Path) -> Result<(NeuralPropagator, CheckpointManifest)> {
    let path = if dir.is_dir() { dir.join(CHECKPOINT_FILE) } else { dir.to_path_buf() };
    let root = path.parent().unwrap_or(Path::new("."));
    let m: CheckpointManifest =
        serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", m.format_version)));
    }
    let blob = fs::read(root.join(PARAMS_FILE))?;
    if hex::encode(Sha256::digest(&blob)) != m.blob_sha256 {
        return Err(Error::Format("parameter blob checksum mismatch".into()));
    }
    let mut model = NeuralPropagator::new(m.setup, m.architecture.clone(), m.init_seed)?;
    let net = model.net_mut().expect("constructed with a network");
    if net.params.len() != m.params.len() {
        return Err(Error::Format(format!("{} stored parameters for {} expected", m.params.len(), net.params.len())));
    }
    for e in &m.params {
        let id = net
            .params
            .id(&e.name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {}", e.name)))?;
        let p = net.params.get_mut(id);
        let end = (e.offset + e.len) * 8;
        if p.shape != e.shape || p.data.len() != e.len || end > blob.len() {
            return Err(Error::Format(format!("parameter {} does not match the architecture", e.name)));
        }
        for (v, b) in p.data.iter_mut().zip(blob[e.offset * 8..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if net.params.checksum(true) != m.trainable_checksum {
        return Err(Error::Format("trainable parameter checksum mismatch".into()));
    }
    Ok((model, m))
}
