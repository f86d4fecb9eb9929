use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ofo_recsys::baselines::MethodKind;
use ofo_recsys::harness::{
    self, load_artifact, output, save_artifact, write_manifest, write_results, write_sweep_csv,
    ExperimentConfig, Manifest,
};
use ofo_recsys::Error;

/// Simulated recommender platform steering a social network: trains the
/// neural estimators, runs closed-loop experiments and writes CSV results.
#[derive(Debug, Parser)]
#[command(name = "ofo-recsys", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (overrides experiment.master_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Quick preset: 8 users, 5000 steps, 20 trials.
    #[arg(long)]
    desk_scale: bool,
    /// Number of Monte-Carlo trials (overrides experiment.trials).
    #[arg(long)]
    trials: Option<usize>,
    /// Closed-loop horizon in steps (overrides experiment.horizon).
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct Estimators {
    /// Estimator artifact written by `train`; trained on the fly if absent.
    #[arg(long, value_name = "FILE")]
    estimators: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect offline data, fit the estimators of every trial and save them.
    Train {
        #[command(flatten)]
        common: Common,
        /// Artifact path.
        #[arg(long, default_value = "estimators.json")]
        out: PathBuf,
    },
    /// Run one method on one trial and write its full trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        estimators: Estimators,
        /// m1, m2, m3, m4, naive or extreme.
        #[arg(long, default_value = "m4")]
        method: MethodKind,
        /// Trial index.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the configured methods over all trials.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        estimators: Estimators,
        /// Comma-separated method list (overrides experiment.methods).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<MethodKind>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Repeat the sweep methods for several polarization weights.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        estimators: Estimators,
        /// Comma-separated γ values (overrides experiment.gammas).
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<MethodKind>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Artifact(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if common.desk_scale {
        config = config.desk_scale();
    }
    if let Some(seed) = common.seed {
        config.experiment.master_seed = seed;
    }
    if let Some(trials) = common.trials {
        config.experiment.trials = trials;
    }
    if let Some(horizon) = common.horizon {
        config.experiment.horizon = horizon;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn artifact(path: Option<&Path>) -> Result<Option<harness::EstimatorArtifact>, Failure> {
    path.map(|p| load_artifact(p).map_err(|e| Failure::Config(e.to_string())))
        .transpose()
}

fn file_names(files: &[PathBuf]) -> Vec<String> {
    files
        .iter()
        .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect()
}

fn manifest(dir: &Path, command: &str, config: &ExperimentConfig, est: Option<&Path>, files: &[PathBuf]) -> Result<(), Failure> {
    let names = file_names(files);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_manifest(dir, &Manifest::new(command, config, est, &refs))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { common, out } => {
            let config = load_config(&common)?;
            log::info!("training estimators for {} trials", config.experiment.trials);
            let artifact = harness::train_artifact(&config)?;
            save_artifact(&out, &artifact)?;
            println!("wrote {}", out.display());
        }
        Command::Simulate {
            common,
            estimators,
            method,
            trial,
            out,
        } => {
            let config = load_config(&common)?;
            let artifact = artifact(estimators.estimators.as_deref())?;
            let prepared = harness::prepare_trial(&config, trial, method.needs_bank(), artifact.as_ref())?;
            let (traj, result) = harness::run_trial_method(&config, &config.controller(), &prepared, method)?;
            let steps = out.join("trajectory.csv");
            let triggers = out.join("trajectory_triggers.csv");
            let trials = out.join("trials.csv");
            std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            let write = |path: &Path, f: &dyn Fn(std::fs::File) -> csv::Result<()>| -> Result<(), Failure> {
                let file = std::fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                f(file).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
            };
            write(&steps, &|f| traj.write_steps_csv(f))?;
            write(&triggers, &|f| traj.write_triggers_csv(f))?;
            output::write_trials_csv(&trials, std::slice::from_ref(&result))?;
            manifest(&out, "simulate", &config, estimators.estimators.as_deref(), &[steps, triggers, trials])?;
            println!(
                "{method} trial {trial}: final CTR {:.4}, final polarization {:.4}, residual {:.3e} -> {:.3e}",
                result.final_ctr, result.final_pol_cost, result.initial_residual_sq, result.final_residual_sq
            );
        }
        Command::Compare {
            common,
            estimators,
            methods,
            out,
        } => {
            let mut config = load_config(&common)?;
            if let Some(m) = methods {
                config.experiment.methods = m;
            }
            let artifact = artifact(estimators.estimators.as_deref())?;
            let mc = harness::run_monte_carlo(&config, artifact.as_ref())?;
            let files = write_results(&out, &mc.results, &mc.aggregate)?;
            manifest(&out, "compare", &config, estimators.estimators.as_deref(), &files)?;
            for row in mc.aggregate.iter().filter(|r| r.metric == "final_pol_cost" || r.metric == "final_ctr") {
                println!(
                    "{:<8} {:<15} {:.5} ± {:.5}",
                    row.method, row.metric, row.summary.mean, row.summary.std
                );
            }
        }
        Command::SweepGamma {
            common,
            estimators,
            gammas,
            methods,
            out,
        } => {
            let mut config = load_config(&common)?;
            if let Some(g) = gammas {
                config.experiment.gammas = g;
            }
            if let Some(m) = methods {
                config.experiment.sweep_methods = m;
            }
            config.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let artifact = artifact(estimators.estimators.as_deref())?;
            let sweep = harness::sweep_gamma(&config, &config.experiment.gammas, artifact.as_ref())?;
            let sweep_path = out.join("sweep.csv");
            write_sweep_csv(&sweep_path, &sweep.rows)?;
            let mut files = write_results(&out, &sweep.runs.results, &sweep.runs.aggregate)?;
            files.insert(0, sweep_path);
            manifest(&out, "sweep-gamma", &config, estimators.estimators.as_deref(), &files)?;
            for row in &sweep.rows {
                println!(
                    "gamma {:<5} {:<8} CTR {:.5}  polarization {:.5} ± {:.5}",
                    row.gamma,
                    row.method,
                    row.ctr.mean,
                    row.pol_cost.mean,
                    row.pol_cost.sem()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
