//! Versioned JSON checkpoint of one network plus free-form metadata
//! (feature scaling, algorithm, role). Weights are row-major per layer and
//! serialized with round-trip float formatting, so a reload is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mipdrl-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: MlpParams<f64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: MlpParams<f64>, metadata: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: params.layer_sizes(),
            params,
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        // re-validate shapes rather than trusting the file
        let params = MlpParams::from_layers(c.params.layers)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.layer_sizes() != c.layer_sizes {
            return Err(Error::Checkpoint("layer_sizes disagree with weights".into()));
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(Self { params, ..c })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
