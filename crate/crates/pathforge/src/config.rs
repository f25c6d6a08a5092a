//! Pipeline configuration: one JSON document, CLI flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::GrpoConfig;
use crate::reasoning::{PriorityMap, DEFAULT_MAX_COST};
use crate::rewards::{DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_EPSILON};
use crate::services::ClientConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config value for {key}: {message}")]
    Invalid { key: String, message: String },
}

fn default_align_threshold() -> f64 {
    0.85
}

fn default_anchor_threshold() -> f64 {
    0.85
}

fn default_max_cost() -> f64 {
    DEFAULT_MAX_COST
}

fn default_priority() -> BTreeMap<String, f64> {
    PriorityMap::default().0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServicesConfig {
    #[serde(default)]
    pub extractor: ClientConfig,
    #[serde(default)]
    pub generator: ClientConfig,
    #[serde(default)]
    pub judge: ClientConfig,
}

/// Default graph file locations; command-line flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphPaths {
    #[serde(default)]
    pub a: Option<PathBuf>,
    #[serde(default)]
    pub b: Option<PathBuf>,
    #[serde(default)]
    pub fused: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub graph: GraphPaths,
    pub align_threshold: f64,
    pub anchor_threshold: f64,
    pub path_priority: BTreeMap<String, f64>,
    pub max_path_cost: f64,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub services: ServicesConfig,
    pub mock: bool,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            graph: GraphPaths::default(),
            align_threshold: default_align_threshold(),
            anchor_threshold: default_anchor_threshold(),
            path_priority: default_priority(),
            max_path_cost: default_max_cost(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            services: ServicesConfig::default(),
            mock: false,
            seed: 0,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let data = std::fs::read_to_string(path)?;
        let config: Self =
            serde_json::from_str(&data).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn priority_map(&self) -> PriorityMap {
        PriorityMap(self.path_priority.clone())
    }

    /// Fail fast with the offending key's name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.to_string(),
            message,
        };
        let threshold_in_range = |v: f64| v > 0.0 && v <= 1.0;
        if !threshold_in_range(self.align_threshold) {
            return Err(invalid(
                "align_threshold",
                format!("{} outside (0, 1]", self.align_threshold),
            ));
        }
        if !threshold_in_range(self.anchor_threshold) {
            return Err(invalid(
                "anchor_threshold",
                format!("{} outside (0, 1]", self.anchor_threshold),
            ));
        }
        for (relation, mult) in &self.path_priority {
            if mult.is_nan() || *mult <= 0.0 {
                return Err(invalid(
                    "path_priority",
                    format!("multiplier for {relation} must be > 0, got {mult}"),
                ));
            }
        }
        if self.max_path_cost.is_nan() || self.max_path_cost <= 0.0 {
            return Err(invalid(
                "max_path_cost",
                format!("{} must be > 0", self.max_path_cost),
            ));
        }
        if self.reward.alpha < 0.0 {
            return Err(invalid("reward.alpha", format!("{} must be >= 0", self.reward.alpha)));
        }
        if !(0.0..=1.0).contains(&self.reward.beta) {
            return Err(invalid(
                "reward.beta",
                format!("{} outside [0, 1]", self.reward.beta),
            ));
        }
        if self.reward.epsilon.is_nan() || self.reward.epsilon <= 0.0 {
            return Err(invalid(
                "reward.epsilon",
                format!("{} must be > 0", self.reward.epsilon),
            ));
        }
        self.grpo.validate().map_err(|e| invalid("grpo", e.to_string()))?;
        if self.jobs == 0 {
            return Err(invalid("jobs", "must be >= 1".to_string()));
        }
        Ok(())
    }
}
