//! Run configuration: a TOML file with a key for every pipeline
//! hyperparameter, plus helpers to apply command-line overrides
//! (flags win over file values).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentationParams;
use crate::geometry::PartLabel;
use crate::nn::model::ModelConfig;
use crate::nn::train::TrainConfig;
use crate::projection::{ProjectionError, RefinementPriority};
use crate::rules::{default_rules, RuleDatabase, RulesError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("unknown part label {0:?} in config")]
    UnknownLabel(String),
    #[error("invalid priority order: must list each of fuselage, wing, stabilizer, engine once")]
    BadPriority,
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AugmentSection {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
    pub xi5: f64,
    pub symmetric_noise: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentationParams::default();
        Self {
            xi1: p.xi1_target,
            xi2: p.xi2_target,
            xi3: p.xi3_target,
            xi4: p.xi4_target,
            xi5: p.xi5_target,
            symmetric_noise: p.symmetric_noise,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_steps: usize,
    pub gamma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            lr_decay_steps: t.lr_decay_steps,
            gamma: t.gamma,
        }
    }
}

/// Per-label numeric overrides for the expert rule database.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RuleOverride {
    pub label: String,
    pub surface_mesh_dimension: Option<f64>,
    pub initial_wall_spacing: Option<f64>,
    pub growth_rate: Option<f64>,
    pub collision_buffer: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Conformal risk level.
    pub alpha: f64,
    /// Fraction of validation faces held out for calibration.
    pub calibration_fraction: f64,
    /// Refinement priority, finest first.
    pub priority: Vec<String>,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub model: ModelConfig,
    pub rule_overrides: Vec<RuleOverride>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 0.05,
            calibration_fraction: 0.2,
            priority: vec![
                "wing".to_string(),
                "stabilizer".to_string(),
                "engine".to_string(),
                "fuselage".to_string(),
            ],
            augment: AugmentSection::default(),
            train: TrainSection::default(),
            model: ModelConfig::default(),
            rule_overrides: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "calibration_fraction must be in (0, 1), got {}",
                self.calibration_fraction
            )));
        }
        if self.train.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be positive".to_string()));
        }
        self.refinement_priority()?;
        Ok(())
    }

    pub fn augmentation_params(&self, epoch: usize, tau: usize) -> AugmentationParams {
        AugmentationParams {
            xi1_target: self.augment.xi1,
            xi2_target: self.augment.xi2,
            xi3_target: self.augment.xi3,
            xi4_target: self.augment.xi4,
            xi5_target: self.augment.xi5,
            epoch,
            tau,
            symmetric_noise: self.augment.symmetric_noise,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            lr_decay: self.train.lr_decay,
            lr_decay_steps: self.train.lr_decay_steps,
            gamma: self.train.gamma,
            seed: self.seed,
        }
    }

    pub fn refinement_priority(&self) -> Result<RefinementPriority, ConfigError> {
        if self.priority.len() != 4 {
            return Err(ConfigError::BadPriority);
        }
        let mut order = [PartLabel::Fuselage; 4];
        for (i, name) in self.priority.iter().enumerate() {
            order[i] = PartLabel::from_name(name)
                .ok_or_else(|| ConfigError::UnknownLabel(name.clone()))?;
        }
        RefinementPriority::new(order).map_err(|e| match e {
            ProjectionError::InvalidPriority => ConfigError::BadPriority,
            other => ConfigError::Invalid(other.to_string()),
        })
    }

    pub fn rule_database(&self) -> Result<RuleDatabase, ConfigError> {
        let mut rules = default_rules();
        for o in &self.rule_overrides {
            let label = PartLabel::from_name(&o.label)
                .ok_or_else(|| ConfigError::UnknownLabel(o.label.clone()))?;
            let mut settings = rules.get(label)?.clone();
            if let Some(v) = o.surface_mesh_dimension {
                settings.surface_mesh_dimension = v;
            }
            if let Some(v) = o.initial_wall_spacing {
                settings.initial_wall_spacing = v;
            }
            if let Some(v) = o.growth_rate {
                settings.growth_rate = v;
            }
            if let Some(v) = o.collision_buffer {
                settings.collision_buffer = v;
            }
            rules.set(label, settings)?;
        }
        Ok(rules)
    }
}
