//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{GprSettings, RolloutConfig};
use crate::maneuver::ForestConfig;
use crate::preprocess::PreprocessConfig;
use crate::risk::RiskConfig;
use crate::synth::ScenarioSpec;
use crate::traj::Schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    /// Conflict-point proximity and TTC radius, m.
    pub radius: f64,
    pub rollout: RolloutConfig,
    /// Pairs with PET at or below this are ground-truth conflicts, s.
    pub pet_threshold: f64,
    /// Radius of the PET conflict zone, m.
    pub zone_radius: f64,
    /// Number of ground-truth conflicts to extract as case-study tables.
    pub case_studies: usize,
}

impl Default for RiskSection {
    fn default() -> Self {
        let r = RiskConfig::default();
        RiskSection {
            radius: r.radius,
            rollout: r.rollout,
            pet_threshold: 3.0,
            zone_radius: 1.0,
            case_studies: 2,
        }
    }
}

impl RiskSection {
    pub fn risk_config(&self) -> RiskConfig {
        RiskConfig {
            radius: self.radius,
            rollout: self.rollout,
        }
    }
}

/// Trajectory-prediction study run after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// 1-based points to predict from, each with `horizon` steps.
    pub start_points: Vec<usize>,
    pub horizon: usize,
    /// Point to predict from for each of `horizons`.
    pub horizon_start: usize,
    pub horizons: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            start_points: vec![10, 15, 20],
            horizon: 30,
            horizon_start: 10,
            horizons: vec![10, 15, 20],
        }
    }
}

impl TrainSection {
    pub fn start_point_cases(&self) -> Vec<(usize, usize)> {
        self.start_points.iter().map(|&s| (s, self.horizon)).collect()
    }

    pub fn horizon_cases(&self) -> Vec<(usize, usize)> {
        self.horizons.iter().map(|&h| (self.horizon_start, h)).collect()
    }
}

/// Default locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub models: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every random choice of every stage derives from this.
    pub seed: u64,
    pub schema: Schema,
    pub synth: ScenarioSpec,
    pub preprocess: PreprocessConfig,
    pub gpr: GprSettings,
    pub forest: ForestConfig,
    pub train: TrainSection,
    pub risk: RiskSection,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Sets the run seed and pushes it into the stage settings that carry one.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.gpr.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.risk.rollout.validate()?;
        if !(self.risk.radius > 0.0 && self.risk.zone_radius > 0.0) {
            return Err(Error::Config("risk radii must be positive".into()));
        }
        if !(self.risk.pet_threshold >= 0.0) {
            return Err(Error::Config("risk.pet_threshold must be non-negative".into()));
        }
        let t = &self.train;
        if t.horizon == 0 || t.horizon_start == 0 || t.start_points.contains(&0) || t.horizons.contains(&0) {
            return Err(Error::Config("train start points and horizons are 1-based and positive".into()));
        }
        if self.forest.grid.n_trees.is_empty() || self.forest.grid.n_trees.contains(&0) {
            return Err(Error::Config("forest.grid.n_trees needs positive entries".into()));
        }
        if self.gpr.iterations == 0 || self.gpr.max_points < 2 {
            return Err(Error::Config("gpr needs iterations ≥ 1 and max_points ≥ 2".into()));
        }
        Ok(())
    }
}
