//! Experiment configuration: one JSON document for every command.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::dp::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{InitialStateDistribution, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpRunConfig {
    /// Rollouts are added until at least this many tuples exist.
    pub n_tuples: usize,
    /// Roots solved per batch; bounds the overshoot past `n_tuples`.
    pub batch: usize,
}

impl Default for DpRunConfig {
    fn default() -> Self {
        DpRunConfig {
            n_tuples: 5000,
            batch: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_cases: usize,
    pub initial_state: InitialStateDistribution,
    pub compare_dp: bool,
    pub histogram_bins: usize,
    /// Case ids that get an impulse-profile file.
    pub profile_cases: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_cases: 1000,
            initial_state: InitialStateDistribution::default(),
            compare_dp: true,
            histogram_bins: 20,
            profile_cases: vec![0, 1, 2],
        }
    }
}

/// File names, resolved against the output directory when relative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub tuples: PathBuf,
    pub plans: PathBuf,
    pub weights: PathBuf,
    pub train_log: PathBuf,
    pub results: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            tuples: "tuples.csv".into(),
            plans: "plans.json".into(),
            weights: "weights.json".into(),
            train_log: "train_log.csv".into(),
            results: "results".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub discretization: DiscretizationSpec,
    pub training: TrainConfig,
    pub dp: DpRunConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub rng_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every section. Model errors are reported as configuration errors.
    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.discretization.validate()?;
        self.training.validate(&self.model)?;
        self.eval.initial_state.validate(&self.model)?;
        if self.dp.batch == 0 {
            return Err(Error::ConfigInvalid("dp.batch must be positive".into()));
        }
        if self.eval.histogram_bins == 0 {
            return Err(Error::ConfigInvalid(
                "eval.histogram_bins must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Applies the top-level seed to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self.training.rng_seed = seed;
        self
    }

    pub fn resolve(&self, out_dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            out_dir.join(p)
        }
    }
}
