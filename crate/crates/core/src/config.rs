//! Run configuration: a single JSON document. Unknown keys are rejected;
//! missing keys take their defaults. Command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::DEFAULT_ROLLOUTS;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_RANDOM_SEEDS, DEFAULT_VOTE_KS};
use crate::grpo::GrpoConfig;
use crate::labeling::{DateRange, OodStockPolicy, DEFAULT_OOD_STOCK_COUNT};
use crate::reward::{CorrectnessRule, RewardWeights};

pub const DEFAULT_BATCH_CAP: usize = 4096;
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub rollouts: u32,
    pub correctness: CorrectnessRule,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            rollouts: DEFAULT_ROLLOUTS,
            correctness: CorrectnessRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub stock_count: usize,
    pub dates: Option<DateRange>,
    pub stock_policy: OodStockPolicy,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            stock_count: DEFAULT_OOD_STOCK_COUNT,
            dates: None,
            stock_policy: OodStockPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub batch_cap: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.to_string(),
            batch_cap: DEFAULT_BATCH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub weights: RewardWeights,
    pub grpo: GrpoConfig,
    pub curriculum: CurriculumConfig,
    pub vote_ks: Vec<usize>,
    pub random_seeds: usize,
    pub ood: OodConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weights: RewardWeights::default(),
            grpo: GrpoConfig::default(),
            curriculum: CurriculumConfig::default(),
            vote_ks: DEFAULT_VOTE_KS.to_vec(),
            random_seeds: DEFAULT_RANDOM_SEEDS,
            ood: OodConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.grpo.validate()?;
        if self.curriculum.rollouts == 0 {
            return Err(Error::validation("curriculum.rollouts must be at least 1"));
        }
        if self.vote_ks.is_empty() || self.vote_ks.contains(&0) {
            return Err(Error::validation("vote_ks must be a non-empty list of positive counts"));
        }
        if self.random_seeds == 0 {
            return Err(Error::validation("random_seeds must be at least 1"));
        }
        if self.service.batch_cap == 0 {
            return Err(Error::validation("service.batch_cap must be at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.ood.stock_count, 50);
        assert_eq!(cfg.curriculum.rollouts, 8);
        assert_eq!(cfg.grpo.epsilon, 0.2);
        assert_eq!(cfg.grpo.kl_coef, 0.001);
        assert_eq!(cfg.vote_ks, [1, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"weights": {"alpha": 1, "beta": 1, "gamma": 1, "delta": 0}}"#).is_err());
    }

    #[test]
    fn partial_override_and_validation() {
        let cfg = RunConfig::from_json(r#"{"seed": 9, "ood": {"dates": {"start": "2024-12-01", "end": "2024-12-31"}}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.ood.dates.is_some());
        assert_eq!(cfg.ood.stock_count, 50);
        assert!(RunConfig::from_json(r#"{"vote_ks": [1, 0]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grpo": {"epsilon": 0, "kl_coef": 0, "std_guard": 1}}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
