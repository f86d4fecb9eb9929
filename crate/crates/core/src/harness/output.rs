use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{
    bands, trial_seed, AggregateRow, BandRow, EstimatorArtifact, SweepRow, TrialResult,
};
use crate::error::{Error, Result};

pub const TRIALS_HEADER: [&str; 9] = [
    "trial",
    "seed",
    "method",
    "gamma",
    "scenario_hash",
    "final_ctr",
    "final_pol_cost",
    "initial_residual",
    "final_residual",
];

pub const TRIGGERS_HEADER: [&str; 11] = [
    "trial",
    "method",
    "gamma",
    "k",
    "residual",
    "ctr_cost",
    "pol_cost",
    "sens_rel_err",
    "mean_ctr_window",
    "sigma_q",
    "sigma_r",
];

pub const AGGREGATE_HEADER: [&str; 6] = ["method", "gamma", "metric", "count", "mean", "std"];

pub const BANDS_HEADER: [&str; 10] = [
    "method",
    "gamma",
    "index",
    "k",
    "residual_mean",
    "residual_std",
    "sens_rel_err_mean",
    "sens_rel_err_std",
    "pol_cost_mean",
    "pol_cost_std",
];

pub const SWEEP_HEADER: [&str; 8] = [
    "gamma",
    "method",
    "count",
    "ctr_mean",
    "ctr_std",
    "pol_cost_mean",
    "pol_cost_std",
    "pol_cost_sem",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trials_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    write_table(
        path,
        &TRIALS_HEADER,
        results.iter().map(|r| {
            vec![
                r.trial.to_string(),
                r.seed.to_string(),
                r.method.to_string(),
                num(r.gamma),
                r.scenario_hash.clone(),
                num(r.final_ctr),
                num(r.final_pol_cost),
                num(r.initial_residual_sq),
                num(r.final_residual_sq),
            ]
        }),
    )
}

pub fn write_triggers_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    write_table(
        path,
        &TRIGGERS_HEADER,
        results.iter().flat_map(|r| {
            r.triggers.iter().map(move |t| {
                let m = &t.metrics;
                vec![
                    r.trial.to_string(),
                    r.method.to_string(),
                    num(r.gamma),
                    m.k.to_string(),
                    num(m.residual_sq),
                    num(m.ctr_cost),
                    num(m.pol_cost),
                    num(m.sens_rel_err),
                    num(m.mean_ctr_window),
                    opt(t.sigma_q),
                    opt(t.sigma_r),
                ]
            })
        }),
    )
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_table(
        path,
        &AGGREGATE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                num(r.gamma),
                r.metric.clone(),
                r.summary.count.to_string(),
                num(r.summary.mean),
                num(r.summary.std),
            ]
        }),
    )
}

pub fn write_bands_csv(path: &Path, rows: &[BandRow]) -> Result<()> {
    write_table(
        path,
        &BANDS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                num(r.gamma),
                r.index.to_string(),
                r.k.to_string(),
                num(r.residual.mean),
                num(r.residual.std),
                num(r.sens_rel_err.mean),
                num(r.sens_rel_err.std),
                num(r.pol_cost.mean),
                num(r.pol_cost.std),
            ]
        }),
    )
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_table(
        path,
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                num(r.gamma),
                r.method.to_string(),
                r.pol_cost.count.to_string(),
                num(r.ctr.mean),
                num(r.ctr.std),
                num(r.pol_cost.mean),
                num(r.pol_cost.std),
                num(r.pol_cost.sem()),
            ]
        }),
    )
}

/// Echo of the resolved run, written next to the CSV files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    pub trial_seeds: Vec<u64>,
    pub estimators: Option<String>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, estimators: Option<&Path>, files: &[&str]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.clone(),
            trial_seeds: (0..config.experiment.trials)
                .map(|i| trial_seed(config.experiment.master_seed, i))
                .collect(),
            estimators: estimators.map(|p| p.display().to_string()),
            files: files.iter().map(|f| f.to_string()).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_json(&dir.join("manifest.json"), manifest)
}

pub fn save_artifact(path: &Path, artifact: &EstimatorArtifact) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, artifact).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.flush().map_err(io_err(path))
}

pub fn load_artifact(path: &Path) -> Result<EstimatorArtifact> {
    let file = File::open(path).map_err(io_err(path))?;
    let artifact: EstimatorArtifact =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    artifact.check_header()?;
    Ok(artifact)
}

/// Writes trials, triggers, aggregate and band tables into `dir` and
/// returns the file names.
pub fn write_results(dir: &Path, results: &[TrialResult], aggregate: &[AggregateRow]) -> Result<Vec<PathBuf>> {
    let files = [
        dir.join("trials.csv"),
        dir.join("triggers.csv"),
        dir.join("aggregate.csv"),
        dir.join("bands.csv"),
    ];
    write_trials_csv(&files[0], results)?;
    write_triggers_csv(&files[1], results)?;
    write_aggregate_csv(&files[2], aggregate)?;
    write_bands_csv(&files[3], &bands(results))?;
    Ok(files.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &[], &[]).unwrap();
        let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        assert_eq!(trials, format!("{}\n", TRIALS_HEADER.join(",")));
        let triggers = std::fs::read_to_string(dir.path().join("triggers.csv")).unwrap();
        assert_eq!(triggers.lines().count(), 1);
        write_sweep_csv(&dir.path().join("sweep.csv"), &[]).unwrap();
        let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(sweep.trim_end(), SWEEP_HEADER.join(","));
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_trials_csv(&blocker.join("trials.csv"), &[]).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
