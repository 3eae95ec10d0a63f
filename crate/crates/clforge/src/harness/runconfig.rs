//! Run configuration, seeds, and the config hash recorded in every report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::DivisorMode;
use crate::strategies::StrategyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub train: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds { data: seed, model: seed, train: seed }
    }

    /// CLFORGE_SEED overrides every seed.
    pub fn apply_env(mut self) -> Self {
        if let Some(seed) = env_seed() {
            self = Seeds::all(seed);
        }
        self
    }
}

pub fn env_seed() -> Option<u64> {
    std::env::var("CLFORGE_SEED").ok().and_then(|v| v.trim().parse().ok())
}

/// Fine-tuning schedule: up to `max_epochs` epochs with early stopping at
/// `patience` non-improving epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FinetuneSchedule {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        FinetuneSchedule { max_epochs: 10, patience: 2, batch: 16, lr: 3e-4 }
    }
}

/// Everything that determines a continual run; its hash is stamped into
/// every report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: String,
    pub checkpoint: String,
    pub strategy: StrategyConfig,
    pub schedule: FinetuneSchedule,
    pub seeds: Seeds,
    pub divisor_mode: DivisorMode,
    /// Fraction of each experience's train split carved as validation.
    pub valid_fraction: f64,
}

impl RunConfig {
    pub fn new(scenario: &str, checkpoint: &str, strategy: StrategyConfig) -> Self {
        RunConfig {
            scenario: scenario.to_string(),
            checkpoint: checkpoint.to_string(),
            strategy,
            schedule: FinetuneSchedule::default(),
            seeds: Seeds::all(0),
            divisor_mode: DivisorMode::Observed,
            valid_fraction: 0.10,
        }
    }

    /// Hash of the canonical serialized config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable config");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(&hasher.finalize()[..16])
    }
}
