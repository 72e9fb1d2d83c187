use std::path::Path;

use anyhow::Context;
use prose_core::dataset::{config_hash, DatasetConfig};
use prose_core::integrate::SolverConfig;
use prose_core::model::ProseConfig;
use prose_core::train_eval::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Its hash is stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ProseConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::desk(),
            model: ProseConfig::desk(),
            train: TrainConfig::desk(),
            eval: EvalConfig {
                decode_integrate: Some(SolverConfig::default()),
                ..EvalConfig::default()
            },
        }
    }

    /// Reads `path` when given, else the desk preset; `seed` overrides.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::desk(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.dataset.validate()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        if cfg.model.d_max != cfg.dataset.d_max {
            anyhow::bail!(
                "model d_max {} differs from dataset d_max {}",
                cfg.model.d_max,
                cfg.dataset.d_max
            );
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> [u8; 32] {
        config_hash(self)
    }
}
