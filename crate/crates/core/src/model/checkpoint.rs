//! Checkpoints: `manifest.json` plus one little-endian `f32` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::{tensor_layout, Weights};
use crate::budget::ModelConfig;
use crate::error::{Error, Result};
use crate::float::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "weights.bin";
const FORMAT: &str = "lws-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub data_file: String,
    pub step: u64,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(dir: &Path, config: &ModelConfig, step: u64, weights: &Weights<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(weights.numel() * 4);
    let mut entries = Vec::new();
    for (info, tensor) in tensor_layout(config).into_iter().zip(weights.tensors()) {
        if info.numel() != tensor.len() {
            return Err(Error::Checkpoint(format!("tensor {} has the wrong size", info.name)));
        }
        entries.push(TensorEntry { name: info.name, shape: info.shape, offset: blob.len() as u64 });
        for v in tensor {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        dtype: "f32-le".into(),
        data_file: DATA_FILE.into(),
        step,
        config: config.clone(),
        tensors: entries,
    };
    fs::write(dir.join(DATA_FILE), blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Weights<f32>)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    let blob = fs::read(dir.join(&manifest.data_file))?;
    let layout = tensor_layout(&manifest.config);
    if layout.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint("tensor index does not match the configuration".into()));
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for (info, entry) in layout.iter().zip(&manifest.tensors) {
        if info.name != entry.name || info.shape != entry.shape {
            return Err(Error::Checkpoint(format!("unexpected tensor {}", entry.name)));
        }
        let start = entry.offset as usize;
        let end = start + info.numel() * 4;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("data file too short for {}", entry.name)))?;
        tensors.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    let weights = Weights::from_tensors(&manifest.config, tensors);
    Ok((manifest, weights))
}
