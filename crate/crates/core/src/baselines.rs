//! Comparison recommenders: oracle and partially informed variants of the
//! projected-gradient controller, the network-agnostic variant, and a
//! history-based recommender that only serves extreme positions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    simulate, ControllerConfig, GradientSource, OfoPolicy, OpinionSource, PolicyOutput,
    PositionPolicy, SensitivitySource, StepObservation, Trajectory,
};
use crate::error::{check_len, Error, Result};
use crate::estimators::{EstimatorBank, LocalOpinionBank};
use crate::filter::SensitivityFilter;
use crate::platform::{fj_true_sensitivity, Platform};
use crate::seeds::{rng_from, stream, SimRng};

/// Default exploration probability of the extreme-position recommender.
pub const DEFAULT_EXPLORE: f64 = 0.1;

/// Upper end of the range the naive variant draws its diagonal from.
pub const NAIVE_DIAGONAL_MAX: f64 = 0.5;

/// Method identifiers as they appear in configs and output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    /// Exact opinions, sensitivity and click gradients.
    M1,
    /// Exact opinions and click gradients, learned sensitivity.
    M2,
    /// Estimated opinions, exact click gradients, learned sensitivity.
    M3,
    /// Everything estimated.
    M4,
    /// Local opinion estimates and a fixed diagonal sensitivity.
    Naive,
    /// Serves only ±1 positions based on each user's click history.
    Extreme,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::M1,
        MethodKind::M2,
        MethodKind::M3,
        MethodKind::M4,
        MethodKind::Naive,
        MethodKind::Extreme,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::M1 => "m1",
            MethodKind::M2 => "m2",
            MethodKind::M3 => "m3",
            MethodKind::M4 => "m4",
            MethodKind::Naive => "naive",
            MethodKind::Extreme => "extreme",
        }
    }

    /// Whether the method needs the network-aware estimator bank.
    pub fn needs_bank(self) -> bool {
        matches!(self, MethodKind::M3 | MethodKind::M4 | MethodKind::Naive)
    }

    pub fn needs_local_bank(self) -> bool {
        self == MethodKind::Naive
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A method together with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Oracle,
    KnownOpinions,
    KnownClicking,
    FullAlgorithm,
    NaiveOfo { diagonal: DVector<f64> },
    ExtremePosition { explore: f64 },
}

impl MethodSpec {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodSpec::Oracle => MethodKind::M1,
            MethodSpec::KnownOpinions => MethodKind::M2,
            MethodSpec::KnownClicking => MethodKind::M3,
            MethodSpec::FullAlgorithm => MethodKind::M4,
            MethodSpec::NaiveOfo { .. } => MethodKind::Naive,
            MethodSpec::ExtremePosition { .. } => MethodKind::Extreme,
        }
    }

    pub fn naive(diagonal: DVector<f64>) -> Result<Self> {
        if !diagonal.iter().all(|&h| h > 0.0 && h <= NAIVE_DIAGONAL_MAX) {
            return Err(Error::InvalidParameter(format!(
                "naive sensitivity entries must lie in (0, {NAIVE_DIAGONAL_MAX}]"
            )));
        }
        Ok(MethodSpec::NaiveOfo { diagonal })
    }

    pub fn extreme(explore: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&explore) {
            return Err(Error::InvalidParameter("exploration probability must lie in [0, 1]".into()));
        }
        Ok(MethodSpec::ExtremePosition { explore })
    }

    /// Default parameters for `kind`; the naive diagonal is drawn from the
    /// per-trial stream of `seed`.
    pub fn for_kind(kind: MethodKind, n: usize, explore: f64, seed: u64) -> Result<Self> {
        Ok(match kind {
            MethodKind::M1 => MethodSpec::Oracle,
            MethodKind::M2 => MethodSpec::KnownOpinions,
            MethodKind::M3 => MethodSpec::KnownClicking,
            MethodKind::M4 => MethodSpec::FullAlgorithm,
            MethodKind::Naive => MethodSpec::naive(naive_diagonal(n, seed))?,
            MethodKind::Extreme => MethodSpec::extreme(explore)?,
        })
    }
}

/// Diagonal sensitivity with entries uniform on `(0, 0.5]`.
pub fn naive_diagonal(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng_from(seed, &[stream::NAIVE_SENSITIVITY]);
    // 1 - U[0, 1) lies in (0, 1]
    DVector::from_fn(n, |_, _| NAIVE_DIAGONAL_MAX * (1.0 - rng.random::<f64>()))
}

/// Everything a method may draw on. Each constructor below takes only the
/// pieces its method is entitled to.
pub struct MethodInputs<'a> {
    pub platform: &'a Platform,
    pub bank: Option<&'a EstimatorBank>,
    pub local: Option<&'a LocalOpinionBank>,
}

fn kalman(n: usize, config: &ControllerConfig) -> Result<SensitivitySource> {
    Ok(SensitivitySource::Kalman(SensitivityFilter::new(n, config.tuning_divisor)?))
}

/// Exact ingredients, no dither.
pub fn oracle_policy<'a>(
    platform: &'a Platform,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<OfoPolicy<'a>> {
    OfoPolicy::new(
        OpinionSource::Truth,
        SensitivitySource::Known(fj_true_sensitivity(&platform.params)?),
        GradientSource::Analytic(&platform.clicks),
        *config,
        horizon,
        false,
        seed,
    )
}

pub fn known_opinions_policy<'a>(
    platform: &'a Platform,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<OfoPolicy<'a>> {
    OfoPolicy::new(
        OpinionSource::Truth,
        kalman(platform.n(), config)?,
        GradientSource::Analytic(&platform.clicks),
        *config,
        horizon,
        true,
        seed,
    )
}

pub fn known_clicking_policy<'a>(
    platform: &'a Platform,
    bank: &'a EstimatorBank,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<OfoPolicy<'a>> {
    check_len(platform.n(), bank.n(), "estimator bank")?;
    OfoPolicy::new(
        OpinionSource::Network(bank),
        kalman(platform.n(), config)?,
        GradientSource::Analytic(&platform.clicks),
        *config,
        horizon,
        true,
        seed,
    )
}

pub fn full_policy<'a>(
    bank: &'a EstimatorBank,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<OfoPolicy<'a>> {
    OfoPolicy::new(
        OpinionSource::Network(bank),
        kalman(bank.n(), config)?,
        GradientSource::ForwardDifference(bank),
        *config,
        horizon,
        true,
        seed,
    )
}

pub fn naive_policy<'a>(
    local: &'a LocalOpinionBank,
    bank: &'a EstimatorBank,
    diagonal: &DVector<f64>,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<OfoPolicy<'a>> {
    check_len(bank.n(), local.n(), "local opinion bank")?;
    check_len(bank.n(), diagonal.len(), "naive diagonal")?;
    OfoPolicy::new(
        OpinionSource::Local(local),
        SensitivitySource::Fixed(DMatrix::from_diagonal(diagonal)),
        GradientSource::ForwardDifference(bank),
        *config,
        horizon,
        true,
        seed,
    )
}

/// ε-greedy choice between `+1` and `-1` per user, based on the click ratio
/// each sign has earned so far.
#[derive(Debug, Clone)]
pub struct ExtremePolicy {
    explore: f64,
    shows: Vec<[u64; 2]>,
    clicks: Vec<[u64; 2]>,
    rng: SimRng,
}

impl ExtremePolicy {
    pub fn new(n: usize, explore: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&explore) {
            return Err(Error::InvalidParameter("exploration probability must lie in [0, 1]".into()));
        }
        Ok(Self {
            explore,
            shows: vec![[0; 2]; n],
            clicks: vec![[0; 2]; n],
            rng: rng_from(seed, &[stream::EXPLORE]),
        })
    }

    /// Empirical click ratio of user `i` on `+1` (slot 0) and `-1` (slot 1).
    pub fn ratios(&self, i: usize) -> [Option<f64>; 2] {
        let r = |s: usize| (self.shows[i][s] > 0).then(|| self.clicks[i][s] as f64 / self.shows[i][s] as f64);
        [r(0), r(1)]
    }

    /// Always consumes one uniform draw per user.
    pub fn choose(&mut self, i: usize) -> f64 {
        let u: f64 = self.rng.random();
        match self.ratios(i) {
            [Some(plus), Some(minus)] if plus != minus => {
                let best = if plus > minus { 1.0 } else { -1.0 };
                if u < 1.0 - self.explore {
                    best
                } else {
                    -best
                }
            }
            _ => {
                if u < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn record(&mut self, p: &DVector<f64>, clicks: &[u8]) {
        for (i, (&pi, &c)) in p.iter().zip(clicks).enumerate() {
            let slot = if pi > 0.0 {
                0
            } else if pi < 0.0 {
                1
            } else {
                continue;
            };
            self.shows[i][slot] += 1;
            self.clicks[i][slot] += u64::from(c);
        }
    }
}

impl PositionPolicy for ExtremePolicy {
    fn initial_positions(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| self.choose(i))
    }

    fn observe(&mut self, obs: &StepObservation<'_>) -> Result<PolicyOutput> {
        self.record(obs.p, obs.clicks);
        let n = obs.p.len();
        Ok(PolicyOutput {
            opinion_estimate: None,
            next_positions: DVector::from_fn(n, |i, _| self.choose(i)),
        })
    }
}

/// Runs `spec` on the platform. Estimator-based methods fail with a config
/// error when their bank is missing.
pub fn run_method(
    spec: &MethodSpec,
    inputs: &MethodInputs<'_>,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let platform = inputs.platform;
    let bank = || {
        inputs
            .bank
            .ok_or_else(|| Error::Config(format!("method {} needs trained estimators", spec.kind())))
    };
    let mut policy: Box<dyn PositionPolicy + '_> = match spec {
        MethodSpec::Oracle => Box::new(oracle_policy(platform, config, horizon, seed)?),
        MethodSpec::KnownOpinions => Box::new(known_opinions_policy(platform, config, horizon, seed)?),
        MethodSpec::KnownClicking => {
            Box::new(known_clicking_policy(platform, bank()?, config, horizon, seed)?)
        }
        MethodSpec::FullAlgorithm => {
            let bank = bank()?;
            check_len(platform.n(), bank.n(), "estimator bank")?;
            Box::new(full_policy(bank, config, horizon, seed)?)
        }
        MethodSpec::NaiveOfo { diagonal } => {
            let local = inputs
                .local
                .ok_or_else(|| Error::Config("method naive needs local opinion estimators".into()))?;
            let bank = bank()?;
            check_len(platform.n(), bank.n(), "estimator bank")?;
            Box::new(naive_policy(local, bank, diagonal, config, horizon, seed)?)
        }
        MethodSpec::ExtremePosition { explore } => {
            Box::new(ExtremePolicy::new(platform.n(), *explore, seed)?)
        }
    };
    simulate(platform, policy.as_mut(), config, horizon, seed)
}
