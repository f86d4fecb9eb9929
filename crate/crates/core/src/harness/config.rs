use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{MethodKind, DEFAULT_EXPLORE};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::estimators::{Optimizer, TrainParams};
use crate::filter::DEFAULT_TUNING_DIVISOR;
use crate::platform::{ClickModel, FjParams, Platform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub trials: usize,
    pub master_seed: u64,
    /// Closed-loop horizon `N`.
    pub horizon: usize,
    /// Methods run by `compare`.
    pub methods: Vec<MethodKind>,
    /// Methods run at each value of the γ sweep.
    pub sweep_methods: Vec<MethodKind>,
    pub gammas: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 50,
            master_seed: 0,
            horizon: 25_000,
            methods: MethodKind::ALL.to_vec(),
            sweep_methods: vec![MethodKind::M4],
            gammas: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Probability that an adjacency entry is zeroed.
    pub sparsity: f64,
    /// Number of users with extremity-biased clicking.
    pub behaviour_split: usize,
    /// Row sums are scaled to at most `1 / (1 + row_slack)`.
    pub row_slack: f64,
    pub gamma_p_range: (f64, f64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 15,
            sparsity: 0.4,
            behaviour_split: 8,
            row_slack: 0.05,
            gamma_p_range: (0.01, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub m_train: usize,
    pub m_test: usize,
    /// Steps each offline sample holds its position.
    pub horizon: usize,
    pub window: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            m_train: 375,
            m_test: 125,
            horizon: 100,
            window: 60,
            optimizer: p.optimizer,
            learning_rate: p.learning_rate,
            epochs: p.epochs,
            batch_size: p.batch_size,
        }
    }
}

impl TrainingConfig {
    pub fn params(&self) -> TrainParams {
        TrainParams {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Divisor `M` in the process-noise heuristic.
    pub tuning_divisor: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tuning_divisor: DEFAULT_TUNING_DIVISOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    /// Exploration probability of the extreme-position recommender.
    pub explore: f64,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            explore: DEFAULT_EXPLORE,
        }
    }
}

/// An explicit population that replaces random scenario generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub params: FjParams,
    pub clicks: ClickModel,
    pub x0: Vec<f64>,
}

impl PlantConfig {
    pub fn platform(&self) -> Result<Platform> {
        self.params.validate()?;
        Platform::new(
            self.params.clone(),
            self.clicks.clone(),
            DVector::from_column_slice(&self.x0),
        )
    }
}

/// Full experiment configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioConfig,
    pub training: TrainingConfig,
    pub controller: ControllerConfig,
    pub filter: FilterConfig,
    pub baselines: BaselinesConfig,
    pub plant: Option<PlantConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Smaller population and horizon for quick runs: `n = 8`, `N = 5000`,
    /// 20 trials, half of the users extremity-biased.
    pub fn desk_scale(mut self) -> Self {
        self.scenario.n = 8;
        self.scenario.behaviour_split = 4;
        self.experiment.horizon = 5_000;
        self.experiment.trials = 20;
        self
    }

    /// Controller settings with the filter section folded in.
    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            tuning_divisor: self.filter.tuning_divisor,
            ..self.controller
        }
    }

    pub fn n(&self) -> usize {
        match &self.plant {
            Some(p) => p.params.n(),
            None => self.scenario.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let e = &self.experiment;
        if e.trials == 0 {
            return bad("experiment.trials must be at least 1".into());
        }
        if e.horizon < self.controller.period {
            return bad("experiment.horizon must cover at least one trigger period".into());
        }
        if e.gammas.iter().any(|g| !(*g >= 0.0)) {
            return bad("experiment.gammas must be non-negative".into());
        }
        let s = &self.scenario;
        if s.n == 0 {
            return bad("scenario.n must be positive".into());
        }
        if s.behaviour_split > s.n {
            return bad(format!("scenario.behaviour_split {} exceeds n = {}", s.behaviour_split, s.n));
        }
        if !(0.0..=1.0).contains(&s.sparsity) {
            return bad("scenario.sparsity must lie in [0, 1]".into());
        }
        if !(s.row_slack > 0.0) {
            return bad("scenario.row_slack must be positive".into());
        }
        let (lo, hi) = s.gamma_p_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad("scenario.gamma_p_range must satisfy 0 < lo <= hi < 1".into());
        }
        let t = &self.training;
        if t.m_train < 2 {
            return bad("training.m_train must be at least 2".into());
        }
        if t.window >= t.horizon {
            return bad("training.window must be shorter than training.horizon".into());
        }
        if !(t.learning_rate > 0.0) || t.epochs == 0 || t.batch_size == Some(0) {
            return bad("training needs a positive learning rate, epochs and batch size".into());
        }
        if !(self.filter.tuning_divisor > 0.0) {
            return bad("filter.tuning_divisor must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.baselines.explore) {
            return bad("baselines.explore must lie in [0, 1]".into());
        }
        self.controller()
            .validate()
            .or_else(|e| bad(format!("controller: {e}")))?;
        if let Some(plant) = &self.plant {
            if let Err(e) = plant.platform() {
                return bad(format!("plant: {e}"));
            }
        }
        Ok(())
    }
}
