use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrainingConfig};
use super::scenario::{generate_scenario, scenario_hash};
use crate::baselines::{run_method, MethodInputs, MethodKind, MethodSpec};
use crate::controller::{polarization_cost, ControllerConfig, Trajectory, TriggerRecord};
use crate::error::{Error, Result};
use crate::estimators::{collect_training_data, EstimatorBank, LocalOpinionBank, TrainingSet};
use crate::metrics::{band, mean_ctr, summarize, Summary};
use crate::platform::Platform;
use crate::seeds::{derive_seed, rng_from, stream};

pub const ARTIFACT_FORMAT: &str = "ofo-recsys-estimators";
pub const ARTIFACT_VERSION: u32 = 1;

/// Offline data and fitted estimators of one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEstimators {
    pub train: TrainingSet,
    pub test: TrainingSet,
    pub bank: EstimatorBank,
    pub local: LocalOpinionBank,
}

impl TrialEstimators {
    /// Collects `m_train + m_test` offline samples and fits both banks.
    pub fn fit(platform: &Platform, config: &TrainingConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed, &[stream::TRAINING_DATA]);
        let all = collect_training_data(
            platform,
            config.m_train + config.m_test,
            config.horizon,
            config.window,
            &mut rng,
        )?;
        let (train, test) = all.split(config.m_train);
        let params = config.params();
        let test_ref = (!test.is_empty()).then_some(&test);
        let bank = EstimatorBank::train(&train, test_ref, &params, seed)?;
        let local = LocalOpinionBank::train(&train, test_ref, &params, seed)?;
        Ok(Self {
            train,
            test,
            bank,
            local,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub trial: usize,
    pub seed: u64,
    pub scenario_hash: String,
    pub estimators: TrialEstimators,
}

/// Cached offline phase for every trial of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorArtifact {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub training: TrainingConfig,
    pub entries: Vec<ArtifactEntry>,
}

impl EstimatorArtifact {
    pub fn entry(&self, trial: usize) -> Option<&ArtifactEntry> {
        self.entries.iter().find(|e| e.trial == trial)
    }

    pub fn check_header(&self) -> Result<()> {
        if self.format != ARTIFACT_FORMAT || self.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported artifact {} v{} (expected {ARTIFACT_FORMAT} v{ARTIFACT_VERSION})",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

/// A trial's population, seeds and (optionally) estimators.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub index: usize,
    pub seed: u64,
    pub platform: Platform,
    pub hash: String,
    pub estimators: Option<TrialEstimators>,
}

impl PreparedTrial {
    pub fn inputs(&self) -> MethodInputs<'_> {
        MethodInputs {
            platform: &self.platform,
            bank: self.estimators.as_ref().map(|e| &e.bank),
            local: self.estimators.as_ref().map(|e| &e.local),
        }
    }
}

pub fn trial_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[stream::TRIAL, index as u64])
}

pub fn trial_platform(config: &ExperimentConfig, seed: u64) -> Result<Platform> {
    match &config.plant {
        Some(plant) => plant.platform(),
        None => generate_scenario(&config.scenario, &mut rng_from(seed, &[stream::SCENARIO])),
    }
}

/// Builds trial `index`: its population and, when `fit` is set, estimators
/// taken from `artifact` or trained from scratch.
pub fn prepare_trial(
    config: &ExperimentConfig,
    index: usize,
    fit: bool,
    artifact: Option<&EstimatorArtifact>,
) -> Result<PreparedTrial> {
    let seed = trial_seed(config.experiment.master_seed, index);
    let platform = trial_platform(config, seed)?;
    let hash = scenario_hash(&platform);
    let estimators = if !fit {
        None
    } else if let Some(entry) = artifact.and_then(|a| a.entry(index)) {
        if entry.scenario_hash != hash || entry.seed != seed {
            return Err(Error::Artifact(format!(
                "trial {index} was trained on a different scenario; retrain with the same config and seed"
            )));
        }
        if entry.estimators.bank.n() != platform.n() {
            return Err(Error::Artifact(format!("trial {index} estimators have the wrong size")));
        }
        Some(entry.estimators.clone())
    } else {
        if artifact.is_some() {
            log::warn!("artifact has no entry for trial {index}; training from scratch");
        }
        Some(TrialEstimators::fit(&platform, &config.training, seed)?)
    };
    Ok(PreparedTrial {
        index,
        seed,
        platform,
        hash,
        estimators,
    })
}

pub fn prepare_trials(
    config: &ExperimentConfig,
    fit: bool,
    artifact: Option<&EstimatorArtifact>,
) -> Result<Vec<PreparedTrial>> {
    if let Some(a) = artifact {
        a.check_header()?;
    }
    (0..config.experiment.trials)
        .into_par_iter()
        .map(|i| prepare_trial(config, i, fit, artifact))
        .collect()
}

/// Runs the offline phase for every trial.
pub fn train_artifact(config: &ExperimentConfig) -> Result<EstimatorArtifact> {
    let trials = prepare_trials(config, true, None)?;
    Ok(EstimatorArtifact {
        format: ARTIFACT_FORMAT.to_string(),
        version: ARTIFACT_VERSION,
        master_seed: config.experiment.master_seed,
        training: config.training.clone(),
        entries: trials
            .into_iter()
            .map(|t| ArtifactEntry {
                trial: t.index,
                seed: t.seed,
                scenario_hash: t.hash,
                estimators: t.estimators.expect("estimators were fitted"),
            })
            .collect(),
    })
}

/// Outcome of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub method: MethodKind,
    pub gamma: f64,
    pub scenario_hash: String,
    /// Mean click rate over the last trigger period.
    pub final_ctr: f64,
    /// Polarization cost of the opinions at the end of the horizon.
    pub final_pol_cost: f64,
    pub initial_residual_sq: f64,
    pub final_residual_sq: f64,
    pub triggers: Vec<TriggerRecord>,
}

impl TrialResult {
    pub fn from_trajectory(
        trial: &PreparedTrial,
        method: MethodKind,
        config: &ControllerConfig,
        traj: &Trajectory,
    ) -> Result<Self> {
        let residual = |t: Option<&TriggerRecord>| t.map_or(f64::NAN, |t| t.metrics.residual_sq);
        Ok(Self {
            trial: trial.index,
            seed: trial.seed,
            method,
            gamma: config.gamma,
            scenario_hash: trial.hash.clone(),
            final_ctr: mean_ctr(traj, config.period)?,
            final_pol_cost: polarization_cost(&traj.final_opinions(), config.eps1, config.eps2),
            initial_residual_sq: residual(traj.triggers.first()),
            final_residual_sq: residual(traj.triggers.last()),
            triggers: traj.triggers.clone(),
        })
    }
}

/// Runs `method` on a prepared trial and returns the full trajectory.
pub fn run_trial_method(
    config: &ExperimentConfig,
    controller: &ControllerConfig,
    trial: &PreparedTrial,
    method: MethodKind,
) -> Result<(Trajectory, TrialResult)> {
    let spec = MethodSpec::for_kind(method, trial.platform.n(), config.baselines.explore, trial.seed)?;
    let traj = run_method(&spec, &trial.inputs(), controller, config.experiment.horizon, trial.seed)?;
    let result = TrialResult::from_trajectory(trial, method, controller, &traj)?;
    Ok((traj, result))
}

fn run_methods(
    config: &ExperimentConfig,
    controller: &ControllerConfig,
    trials: &[PreparedTrial],
    methods: &[MethodKind],
) -> Result<Vec<TrialResult>> {
    let per_trial: Vec<Vec<TrialResult>> = trials
        .par_iter()
        .map(|t| {
            methods
                .iter()
                .map(|&m| run_trial_method(config, controller, t, m).map(|(_, r)| r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

fn sort_results(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then(a.trial.cmp(&b.trial))
            .then(a.method.cmp(&b.method))
    });
}

/// Across-trial summary of one metric for one method (and γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: MethodKind,
    pub gamma: f64,
    pub metric: String,
    pub summary: Summary,
}

/// Per-trigger mean/std band of one method (and γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub method: MethodKind,
    pub gamma: f64,
    pub index: usize,
    pub k: usize,
    pub residual: Summary,
    pub sens_rel_err: Summary,
    pub pol_cost: Summary,
}

pub const AGGREGATE_METRICS: [&str; 4] = [
    "final_ctr",
    "final_pol_cost",
    "initial_residual",
    "final_residual",
];

fn groups(results: &[TrialResult]) -> Vec<((f64, MethodKind), Vec<&TrialResult>)> {
    let mut keys: Vec<(f64, MethodKind)> = results.iter().map(|r| (r.gamma, r.method)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|key| {
            let members = results
                .iter()
                .filter(|r| r.gamma == key.0 && r.method == key.1)
                .collect();
            (key, members)
        })
        .collect()
}

pub fn aggregate(results: &[TrialResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for ((gamma, method), members) in groups(results) {
        let pick: [fn(&TrialResult) -> f64; 4] = [
            |r| r.final_ctr,
            |r| r.final_pol_cost,
            |r| r.initial_residual_sq,
            |r| r.final_residual_sq,
        ];
        for (name, f) in AGGREGATE_METRICS.iter().zip(pick) {
            let values: Vec<f64> = members.iter().map(|r| f(r)).collect();
            rows.push(AggregateRow {
                method,
                gamma,
                metric: name.to_string(),
                summary: summarize(&values),
            });
        }
    }
    rows
}

pub fn bands(results: &[TrialResult]) -> Vec<BandRow> {
    let mut rows = Vec::new();
    for ((gamma, method), members) in groups(results) {
        let series = |f: fn(&TriggerRecord) -> f64| -> Vec<Vec<f64>> {
            members.iter().map(|r| r.triggers.iter().map(f).collect()).collect()
        };
        let residual = band(&series(|t| t.metrics.residual_sq));
        let sens = band(&series(|t| t.metrics.sens_rel_err));
        let pol = band(&series(|t| t.metrics.pol_cost));
        let ks: Vec<usize> = members
            .iter()
            .max_by_key(|r| r.triggers.len())
            .map(|r| r.triggers.iter().map(|t| t.metrics.k).collect())
            .unwrap_or_default();
        for (index, &k) in ks.iter().enumerate() {
            rows.push(BandRow {
                method,
                gamma,
                index,
                k,
                residual: residual[index],
                sens_rel_err: sens[index],
                pol_cost: pol[index],
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub results: Vec<TrialResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl MonteCarloResult {
    fn from_results(mut results: Vec<TrialResult>) -> Self {
        sort_results(&mut results);
        let aggregate = aggregate(&results);
        Self { results, aggregate }
    }

    pub fn for_method(&self, method: MethodKind) -> impl Iterator<Item = &TrialResult> {
        self.results.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self, method: MethodKind, gamma: f64, metric: &str) -> Option<Summary> {
        self.aggregate
            .iter()
            .find(|r| r.method == method && r.gamma == gamma && r.metric == metric)
            .map(|r| r.summary)
    }
}

fn needs_estimators(methods: &[MethodKind]) -> bool {
    methods.iter().any(|m| m.needs_bank())
}

/// Runs every configured method on every trial. All methods of a trial see
/// the same population and the same click and dither streams.
pub fn run_monte_carlo(
    config: &ExperimentConfig,
    artifact: Option<&EstimatorArtifact>,
) -> Result<MonteCarloResult> {
    config.validate()?;
    let methods = &config.experiment.methods;
    let trials = prepare_trials(config, needs_estimators(methods), artifact)?;
    run_monte_carlo_on(config, &trials, methods)
}

/// Same as [`run_monte_carlo`] on already prepared trials.
pub fn run_monte_carlo_on(
    config: &ExperimentConfig,
    trials: &[PreparedTrial],
    methods: &[MethodKind],
) -> Result<MonteCarloResult> {
    let results = run_methods(config, &config.controller(), trials, methods)?;
    Ok(MonteCarloResult::from_results(results))
}

/// One line of the γ trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub method: MethodKind,
    pub ctr: Summary,
    pub pol_cost: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub runs: MonteCarloResult,
}

/// Runs the sweep methods at every γ on a shared set of trials.
pub fn sweep_gamma(
    config: &ExperimentConfig,
    gammas: &[f64],
    artifact: Option<&EstimatorArtifact>,
) -> Result<SweepResult> {
    config.validate()?;
    let methods = &config.experiment.sweep_methods;
    let trials = prepare_trials(config, needs_estimators(methods), artifact)?;
    sweep_gamma_on(config, gammas, &trials, methods)
}

pub fn sweep_gamma_on(
    config: &ExperimentConfig,
    gammas: &[f64],
    trials: &[PreparedTrial],
    methods: &[MethodKind],
) -> Result<SweepResult> {
    if gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::Config("gamma values must be non-negative".into()));
    }
    let mut results = Vec::new();
    for &gamma in gammas {
        let controller = ControllerConfig {
            gamma,
            ..config.controller()
        };
        results.extend(run_methods(config, &controller, trials, methods)?);
    }
    let runs = MonteCarloResult::from_results(results);
    let rows = groups(&runs.results)
        .into_iter()
        .map(|((gamma, method), members)| SweepRow {
            gamma,
            method,
            ctr: summarize(&members.iter().map(|r| r.final_ctr).collect::<Vec<_>>()),
            pol_cost: summarize(&members.iter().map(|r| r.final_pol_cost).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SweepResult { rows, runs })
}
