//! Twin experiments: truth runs, synthetic observations, filter cycling,
//! forecast-skill tables and the `λ` and budget sweeps.
//!
//! RMSE is the root mean squared difference between the analysis estimate
//! (the total-variate mean for the MF-EnKF, the ensemble mean otherwise) and
//! the truth over all assimilated state components. Spread is the root of the
//! mean ensemble variance over the same components. Both are averaged over
//! replicates, then over the cycles after burn-in.

mod config;
mod studies;
mod twin;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{
    Accounting, BudgetSection, ExperimentConfig, FilterSection, LorenzSection, ModelKind, ObsSection, QgSection,
    SurrogateChoice, DATA_DIR_ENV,
};
pub use studies::{
    budget_allocations, budget_sweep, forecast_initial_conditions, forecast_rmse_study, lambda_sweep, step_hours,
    BudgetRow, ForecastRow, LambdaRow, FORECAST_SPIN_UP_STEPS,
};
pub use twin::{
    build_models, full_model, initial_members, load_snapshots, lorenz_spun_up, observation_operator, rmse,
    run_twin_experiment, run_with_models, surrogate_model, truth_run, Artifact, CycleModel, CycleRecord,
    MetricSeries, Models, TruthRun, TwinReport, DIVERGENCE_CYCLES, DIVERGENCE_FACTOR,
};

use crate::filters::FilterError;
use crate::io::{write_csv, write_json, write_json_lines, write_state_file, IoError, StateFile, StateModel};
use crate::model::ModelError;
use crate::qg::QgDynamics;
use crate::surrogate::{reference_lorenz_cnn, save_weights, SurrogateError, WeightContainer};
use crate::ensemble::EnsembleError;
use crate::lorenz::LorenzParams;

/// Weight file names inside `<data>/weights/`.
pub const LORENZ_WEIGHTS: &str = "lorenz_cnn.mfdw";
pub const QG_WEIGHTS: &str = "qg_unet.mfdw";

/// Network calls per six-hour window of the reference Lorenz network.
pub const REFERENCE_CALLS_PER_WINDOW: usize = 12;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing {what}: {path}")]
    MissingArtifact { what: String, path: String },
    #[error("filter diverged in replicate {replicate} at cycle {cycle} (rmse {rmse})")]
    Diverged {
        replicate: usize,
        cycle: usize,
        rmse: f64,
        partial: Box<TwinReport>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl ExperimentError {
    /// Process exit code: 2 configuration, 3 missing artifact, 4 divergence,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::MissingArtifact { .. } => 3,
            ExperimentError::Diverged { .. } => 4,
            _ => 1,
        }
    }
}

/// The committed reference network for the default Lorenz-2005 ring.
pub fn reference_lorenz_weights() -> WeightContainer {
    let p = LorenzParams::default();
    let dt_call = crate::lorenz::STEPS_PER_WINDOW as f64 * p.dt / REFERENCE_CALLS_PER_WINDOW as f64;
    reference_lorenz_cnn(&p, dt_call, REFERENCE_CALLS_PER_WINDOW)
}

/// Writes [`reference_lorenz_weights`] to `<data_dir>/weights/`.
pub fn write_reference_weights(data_dir: &Path) -> Result<PathBuf, ExperimentError> {
    let path = data_dir.join("weights").join(LORENZ_WEIGHTS);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| {
            IoError::File {
                path: dir.display().to_string(),
                source: e,
            }
        })?;
    }
    save_weights(&reference_lorenz_weights(), &path)?;
    Ok(path)
}

/// Generates the truth artifacts of a configuration.
///
/// Lorenz-2005: the spun-up truth at every analysis time. QG: a snapshot
/// library taken every `snapshot_stride` steps after spinning up from rest.
pub fn generate_truth(cfg: &ExperimentConfig) -> Result<(PathBuf, StateFile), ExperimentError> {
    cfg.validate()?;
    match cfg.model {
        ModelKind::Lorenz2005 => {
            let models = build_models(cfg)?;
            let truth = truth_run(cfg, &models.full)?;
            let mut file = StateFile::new(StateModel::Lorenz2005, cfg.lorenz.params.n, 1);
            for (k, s) in truth.states.iter().enumerate() {
                let step = cfg.lorenz.spin_up_steps + k * cfg.every_steps();
                file.push(step as u64, s.as_slice().to_vec());
            }
            let path = cfg.data_dir().join("lorenz_truth.bin");
            write_state_file(&path, &file)?;
            Ok((path, file))
        }
        ModelKind::Qg => {
            let file = qg_snapshot_library(cfg)?;
            let path = cfg.snapshots_path();
            write_state_file(&path, &file)?;
            Ok((path, file))
        }
    }
}

/// Spins the basin up from rest and records interior snapshots.
pub fn qg_snapshot_library(cfg: &ExperimentConfig) -> Result<StateFile, ExperimentError> {
    let dynamics = QgDynamics::dimensionless(&cfg.qg.constants, cfg.qg.cells, cfg.qg.dt)?;
    let g = *dynamics.grid();
    let side = g.interior();
    let mut file = StateFile::new(StateModel::Qg, side, side);
    let mut state = dynamics.steps(&dynamics.rest_state(), cfg.qg.spin_up_steps)?;
    let mut step = cfg.qg.spin_up_steps;
    for k in 0..cfg.qg.snapshot_count {
        if k > 0 {
            state = dynamics.steps(&state, cfg.qg.snapshot_stride)?;
            step += cfg.qg.snapshot_stride;
        }
        file.push(step as u64, g.interior_values(&state.psi));
    }
    Ok(file)
}

#[derive(Serialize)]
struct SeriesRow {
    cycle: usize,
    rmse: f64,
    spread: f64,
    hr_spread: f64,
}

#[derive(Serialize)]
struct PlotSpec<'a> {
    kind: &'a str,
    data: &'a str,
    x: &'a str,
    y: Vec<&'a str>,
    title: String,
}

fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    IoError::File {
        path: path.display().to_string(),
        source: e,
    }
    .into()
}

/// Writes `config.resolved.toml`, `summary.json`, `metrics.csv`,
/// `diagnostics.jsonl` and `plot.json` into `dir`.
pub fn write_twin_outputs(dir: &Path, report: &TwinReport) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let resolved = dir.join("config.resolved.toml");
    std::fs::write(&resolved, report.config.to_toml_string()).map_err(|e| io_err(&resolved, e))?;
    write_json(dir.join("summary.json"), report)?;
    let rows: Vec<SeriesRow> = (0..report.series.rmse.len())
        .map(|k| SeriesRow {
            cycle: k + 1,
            rmse: report.series.rmse[k],
            spread: report.series.spread[k],
            hr_spread: report.series.hr_spread[k],
        })
        .collect();
    write_csv(dir.join("metrics.csv"), &rows)?;
    write_json_lines(dir.join("diagnostics.jsonl"), &report.records)?;
    write_json(
        dir.join("plot.json"),
        &PlotSpec {
            kind: "line",
            data: "metrics.csv",
            x: "cycle",
            y: vec!["rmse", "spread", "hr_spread"],
            title: format!(
                "{:?} {} (N_X={}, N_U={}, λ={})",
                report.config.filter.variant, report.config.surrogate, report.config.n_x, report.config.n_u, report.config.filter.lambda
            ),
        },
    )?;
    Ok(())
}

/// Writes a sweep or study table as `<name>.csv` with a plot spec and the
/// resolved configuration.
pub fn write_table<T: Serialize>(
    dir: &Path,
    name: &str,
    cfg: &ExperimentConfig,
    rows: &[T],
    x: &str,
    y: &[&str],
) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let resolved = dir.join("config.resolved.toml");
    std::fs::write(&resolved, cfg.to_toml_string()).map_err(|e| io_err(&resolved, e))?;
    let csv_name = format!("{name}.csv");
    let path = dir.join(&csv_name);
    write_csv(&path, rows)?;
    write_json(
        dir.join(format!("{name}.plot.json")),
        &PlotSpec {
            kind: "line",
            data: &csv_name,
            x,
            y: y.to_vec(),
            title: name.replace('_', " "),
        },
    )?;
    Ok(path)
}

/// Default output directory for a configuration file.
pub fn default_output_dir(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    match &cfg.output_dir {
        Some(d) => PathBuf::from(d),
        None => {
            let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from("out").join(stem)
        }
    }
}
