//! Scenario generation, Monte-Carlo experiments, the γ sweep, and result
//! files.

pub mod config;
pub mod output;
pub mod runner;
pub mod scenario;

pub use config::{
    BaselinesConfig, ExperimentConfig, ExperimentSection, FilterConfig, PlantConfig,
    ScenarioConfig, TrainingConfig,
};
pub use output::{load_artifact, save_artifact, write_manifest, write_results, write_sweep_csv, Manifest};
pub use runner::{
    aggregate, bands, prepare_trial, prepare_trials, run_monte_carlo, run_monte_carlo_on,
    run_trial_method, sweep_gamma, sweep_gamma_on, train_artifact, trial_seed, AggregateRow,
    BandRow, EstimatorArtifact, MonteCarloResult, PreparedTrial, SweepResult, SweepRow,
    TrialEstimators, TrialResult,
};
pub use scenario::{generate_scenario, scenario_hash};
