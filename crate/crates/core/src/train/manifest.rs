use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Pretty-printed JSON record written next to every trained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub config_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init: String,
    pub freeze: String,
    /// Corpus role (e.g. `train`, `valid`) to content digest.
    pub corpus_digests: BTreeMap<String, String>,
    pub best_step: u64,
    pub best_valid_ppl: f64,
    pub steps: u64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
