//! Versioned JSON checkpoints for network parameters.
//!
//! A checkpoint stores named tensors (shape + row-major values) plus a free
//! `extra` section for network-specific data such as rescaling bounds. JSON
//! floats are written with shortest-round-trip formatting, so reloading
//! reproduces every parameter bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DarcError, Result};
use crate::tensor::Tensor;

/// Current checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct SavedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Layout version; readers reject versions they do not understand.
    pub version: u32,
    /// Which network this checkpoint belongs to (e.g. `"imputer"`).
    pub kind: String,
    pub tensors: Vec<SavedTensor>,
    /// Network-specific extras (column bounds, head counts, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: &str, extra: serde_json::Value) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            tensors: Vec::new(),
            extra,
        }
    }

    /// Record a named tensor's current values.
    pub fn push(&mut self, name: &str, t: &Tensor) {
        self.tensors.push(SavedTensor {
            name: name.to_string(),
            shape: t.shape(),
            values: t.values(),
        });
    }

    /// Look up a saved tensor by name and check its shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<&SavedTensor> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DarcError::BadCheckpoint(format!("missing tensor {name:?}")))?;
        if t.shape != shape {
            return Err(DarcError::BadCheckpoint(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        if t.values.len() != shape.iter().product::<usize>() {
            return Err(DarcError::BadCheckpoint(format!(
                "tensor {name:?} has {} values for shape {shape:?}",
                t.values.len()
            )));
        }
        Ok(t)
    }

    /// Rebuild a trainable parameter tensor from a saved entry.
    pub fn param(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let saved = self.take(name, shape)?;
        Ok(Tensor::param(shape, saved.values.clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| DarcError::WriteOutput {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DarcError::ReadInput {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(DarcError::BadCheckpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.kind != expected_kind {
            return Err(DarcError::BadCheckpoint(format!(
                "checkpoint kind {:?}, expected {expected_kind:?}",
                ckpt.kind
            )));
        }
        Ok(ckpt)
    }
}
