//! Experiment configuration, stored as TOML.
//!
//! ```toml
//! name = "fhn-regularized"
//! variant = "discrete_identity"   # discrete | discrete_identity | continuous
//! operators = 2
//! latent_dim = 2                  # discrete only; defaults to the channel count
//! preprocess = "none"             # none | zscore_per_channel
//! seed = 0
//!
//! [data.system]                   # or [data.file] with path, dt, has_header
//! kind = "fhn"
//! samples = 1000
//!
//! [train]                         # discrete hyperparameters
//! tau = 0.3
//!
//! [continuous]                    # continuous hyperparameters
//! lambda_c = 0.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuous::CtTrainConfig;
use crate::discrete::TrainConfig;
use crate::error::{Error, Result};
use crate::io::table::{self, Preprocess};
use crate::systems::{GroundTruth, SystemSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Learned loading matrix and dynamics dictionary.
    Discrete,
    /// Dynamics dictionary in the observation space (`D = I`).
    DiscreteIdentity,
    /// Matrix-exponential generators (`D = I`).
    Continuous,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Discrete => "discrete",
            ModelVariant::DiscreteIdentity => "discrete_identity",
            ModelVariant::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    pub dt: f64,
    #[serde(default)]
    pub has_header: bool,
}

/// Exactly one of `system` or `file` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<FileSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub variant: ModelVariant,
    /// Dictionary size (`M` discrete, `L` continuous).
    pub operators: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub seed: u64,
    /// Side length of the phase-portrait grid for 2-D latents.
    #[serde(default = "default_phase_grid")]
    pub phase_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub continuous: CtTrainConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_phase_grid() -> usize {
    15
}

/// Loaded experiment data.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub trajectories: Vec<Trajectory>,
    pub truth: Option<GroundTruth>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("reading config {}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.system, &self.data.file) {
            (Some(_), Some(_)) => return Err(Error::Config("data has both a system and a file".into())),
            (None, None) => return Err(Error::Config("data needs a system or a file".into())),
            (None, Some(f)) if !(f.dt > 0.0 && f.dt.is_finite()) => {
                return Err(Error::Config(format!("file dt must be positive, got {}", f.dt)));
            }
            _ => {}
        }
        if self.operators == 0 {
            return Err(Error::Config("operators must be positive".into()));
        }
        match self.latent_dim {
            Some(0) => return Err(Error::Config("latent_dim must be positive".into())),
            Some(_) if self.variant != ModelVariant::Discrete => {
                return Err(Error::Config(format!(
                    "latent_dim only applies to the discrete variant, not {}",
                    self.variant.name()
                )));
            }
            _ => {}
        }
        if self.phase_grid < 2 {
            return Err(Error::Config("phase_grid must be at least 2".into()));
        }
        match self.variant {
            ModelVariant::Continuous => self.continuous.validate(),
            _ => self.train.validate(),
        }
    }

    /// Discrete hyperparameters with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Continuous hyperparameters with the experiment seed applied.
    pub fn continuous_config(&self) -> CtTrainConfig {
        CtTrainConfig {
            seed: self.seed,
            ..self.continuous.clone()
        }
    }

    /// Sampling interval of the configured data.
    pub fn dt(&self) -> f64 {
        match (&self.data.system, &self.data.file) {
            (Some(s), _) => s.dt(),
            (_, Some(f)) => f.dt,
            _ => 1.0,
        }
    }

    pub fn load_data(&self) -> Result<ExperimentData> {
        let (trajectories, truth) = match (&self.data.system, &self.data.file) {
            (Some(system), _) => {
                let generated = system.generate()?;
                (generated.trajectories, generated.truth)
            }
            (_, Some(file)) => (
                vec![table::load_trajectory(&file.path, file.has_header, file.dt, Preprocess::None)?],
                None,
            ),
            _ => return Err(Error::Config("data needs a system or a file".into())),
        };
        Ok(ExperimentData {
            trajectories: trajectories.into_iter().map(|t| self.preprocess.apply(t)).collect(),
            truth,
        })
    }
}

/// Parses either a full experiment config or a bare system table
/// (`kind = "lorenz"` plus generator fields) into the system to simulate.
pub fn system_from_toml(text: &str) -> Result<SystemSpec> {
    match ExperimentConfig::from_toml(text) {
        Ok(cfg) => cfg
            .data
            .system
            .ok_or_else(|| Error::Config("config reads data from a file, not a system".into())),
        Err(full) => toml::from_str::<SystemSpec>(text).map_err(|bare| {
            Error::Config(format!("not an experiment config ({full}) nor a system table ({bare})"))
        }),
    }
}
