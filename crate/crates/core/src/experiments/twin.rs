//! The twin-experiment driver.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::{ExperimentConfig, ModelKind, SurrogateChoice};
use super::ExperimentError;
use crate::ensemble::{Ensemble, MultiFidelityEnsemble, StateVector};
use crate::filters::{mf_enkf_forecast, AnalysisResult, Assimilator, FilterError, FilterVariant};
use crate::io::{file_sha256, read_state_file, StateFile};
use crate::lorenz::{self, LorenzModel, LowResLorenz};
use crate::model::{ForwardModel, ModelError};
use crate::observations::{
    equidistant_operator, generate_observations, satellite_tracks, ObservationOperator,
};
use crate::qg::{QGModel, QgDynamics, LowResQG};
use crate::rng::{stream, StreamId, StreamPurpose, GENERATOR_NAME};
use crate::surrogate::NeuralSurrogate;

/// Consecutive cycles above `100·σ_obs` that abort a run.
pub const DIVERGENCE_CYCLES: usize = 5;
pub const DIVERGENCE_FACTOR: f64 = 100.0;

/// Runs a forward model for several of its windows per call.
pub struct CycleModel {
    inner: Box<dyn ForwardModel>,
    windows: usize,
}

impl CycleModel {
    pub fn new(inner: Box<dyn ForwardModel>, windows: usize) -> Self {
        Self { inner, windows }
    }
}

impl ForwardModel for CycleModel {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn name(&self) -> String {
        self.inner.name()
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.inner.forecast_windows(x, self.windows)
    }
}

/// A file an experiment read, with its digest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

fn artifact(path: &std::path::Path) -> Result<Artifact, ExperimentError> {
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: file_sha256(path)?,
    })
}

/// The full model and the surrogate, each advancing one analysis cycle.
pub struct Models {
    pub full: CycleModel,
    pub surrogate: Option<CycleModel>,
    pub artifacts: Vec<Artifact>,
}

pub(crate) fn qg_dynamics(cfg: &ExperimentConfig) -> Result<QgDynamics, ExperimentError> {
    Ok(QgDynamics::dimensionless(&cfg.qg.constants, cfg.qg.cells, cfg.qg.dt)?)
}

/// The full model advancing one window (one call of `forecast`).
pub fn full_model(cfg: &ExperimentConfig) -> Result<Box<dyn ForwardModel>, ExperimentError> {
    Ok(match cfg.model {
        ModelKind::Lorenz2005 => Box::new(LorenzModel::new(cfg.lorenz.params)?),
        ModelKind::Qg => Box::new(QGModel::new(qg_dynamics(cfg)?)),
    })
}

/// The surrogate advancing one window, plus the files it was loaded from.
pub fn surrogate_model(
    cfg: &ExperimentConfig,
    choice: SurrogateChoice,
) -> Result<Option<(Box<dyn ForwardModel>, Vec<Artifact>)>, ExperimentError> {
    let model: Box<dyn ForwardModel> = match (choice, cfg.model) {
        (SurrogateChoice::None, _) => return Ok(None),
        (SurrogateChoice::LowRes(r), ModelKind::Lorenz2005) => Box::new(LowResLorenz::new(cfg.lorenz.params, r)?),
        (SurrogateChoice::LowRes(r), ModelKind::Qg) => Box::new(LowResQG::new(qg_dynamics(cfg)?, r)?),
        (SurrogateChoice::Nn, _) => {
            let path = cfg.weights_path();
            let net = NeuralSurrogate::load(&path, cfg.state_dim()).map_err(|e| {
                if e.is_missing() {
                    ExperimentError::MissingArtifact {
                        what: "surrogate weights".into(),
                        path: path.display().to_string(),
                    }
                } else {
                    e.into()
                }
            })?;
            return Ok(Some((Box::new(net), vec![artifact(&path)?])));
        }
    };
    Ok(Some((model, Vec::new())))
}

pub fn build_models(cfg: &ExperimentConfig) -> Result<Models, ExperimentError> {
    let windows = cfg.windows_per_cycle();
    let full = CycleModel::new(full_model(cfg)?, windows);
    let (surrogate, artifacts) = match surrogate_model(cfg, cfg.surrogate)? {
        Some((m, a)) => (Some(CycleModel::new(m, windows)), a),
        None => (None, Vec::new()),
    };
    Ok(Models {
        full,
        surrogate,
        artifacts,
    })
}

pub fn observation_operator(cfg: &ExperimentConfig) -> Result<ObservationOperator, ExperimentError> {
    let op = match cfg.model {
        ModelKind::Lorenz2005 => equidistant_operator(cfg.lorenz.params.n, cfg.obs.count.unwrap_or(40)),
        ModelKind::Qg => {
            let tracks = cfg
                .obs
                .tracks
                .clone()
                .ok_or_else(|| ExperimentError::Config("QG runs need a track geometry".into()))?;
            satellite_tracks(&tracks)
        }
    };
    op.map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Loads the QG snapshot library named by the configuration.
pub fn load_snapshots(cfg: &ExperimentConfig) -> Result<(StateFile, Artifact), ExperimentError> {
    let path = cfg.snapshots_path();
    let file = read_state_file(&path).map_err(|e| {
        if e.is_missing() {
            ExperimentError::MissingArtifact {
                what: "QG snapshot library (run `mfda truth` first)".into(),
                path: path.display().to_string(),
            }
        } else {
            e.into()
        }
    })?;
    if file.dim() != cfg.state_dim() {
        return Err(ExperimentError::Config(format!(
            "snapshot states have {} values, the configuration needs {}",
            file.dim(),
            cfg.state_dim()
        )));
    }
    Ok((file, artifact(&path)?))
}

/// Lorenz-2005 state after the spin-up from `Unif(0,1)` components.
pub fn lorenz_spun_up(cfg: &ExperimentConfig, purpose: StreamPurpose, index: u64, steps: usize) -> Result<StateVector, ExperimentError> {
    let p = cfg.lorenz.params;
    let mut rng = stream(purpose, cfg.base_seed, index, 0);
    let x0: Vec<f64> = (0..p.n).map(|_| rng.random::<f64>()).collect();
    Ok(lorenz::step_rk4(&StateVector::new(x0)?, &p, steps)?)
}

/// Truth at analysis times `0..=cycles`, and the snapshot library for QG.
pub struct TruthRun {
    pub states: Vec<StateVector>,
    pub library: Option<StateFile>,
    /// Library index of the truth's initial condition (QG).
    pub start: Option<usize>,
    pub artifacts: Vec<Artifact>,
}

pub fn truth_run(cfg: &ExperimentConfig, full: &CycleModel) -> Result<TruthRun, ExperimentError> {
    let (x0, library, start, artifacts) = match cfg.model {
        ModelKind::Lorenz2005 => (
            lorenz_spun_up(cfg, StreamPurpose::Truth, 0, cfg.lorenz.spin_up_steps)?,
            None,
            None,
            Vec::new(),
        ),
        ModelKind::Qg => {
            let (lib, art) = load_snapshots(cfg)?;
            if lib.is_empty() {
                return Err(ExperimentError::Config("the snapshot library is empty".into()));
            }
            let k = stream(StreamPurpose::Truth, cfg.base_seed, 0, 0).random_range(0..lib.len());
            (StateVector::new(lib.states[k].clone())?, Some(lib), Some(k), vec![art])
        }
    };
    let mut states = Vec::with_capacity(cfg.cycles() + 1);
    states.push(x0);
    for _ in 0..cfg.cycles() {
        let next = full.forecast(states.last().expect("non-empty"))?;
        states.push(next);
    }
    Ok(TruthRun {
        states,
        library,
        start,
        artifacts,
    })
}

/// Draws `count` library states other than `exclude`, without replacement.
fn draw_snapshots<R: Rng + ?Sized>(
    lib: &StateFile,
    exclude: Option<usize>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<StateVector>, ExperimentError> {
    let pool: Vec<usize> = (0..lib.len()).filter(|&i| Some(i) != exclude).collect();
    if count > pool.len() {
        return Err(ExperimentError::Config(format!(
            "{count} members requested but the library offers only {} initial conditions",
            pool.len()
        )));
    }
    rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| Ok(StateVector::new(lib.states[pool[i]].clone())?))
        .collect()
}

/// Initial high-resolution and surrogate members of one replicate.
pub fn initial_members(
    cfg: &ExperimentConfig,
    truth: &TruthRun,
    replicate: usize,
    n_x: usize,
    n_u: usize,
) -> Result<(Vec<StateVector>, Vec<StateVector>), ExperimentError> {
    let mut rng = stream(StreamPurpose::InitialEnsemble, cfg.base_seed, replicate as u64, 0);
    match &truth.library {
        None => {
            let x0 = truth.states[0].as_slice();
            let s = cfg.lorenz.initial_spread;
            let mut draw = |count: usize| -> Result<Vec<StateVector>, ExperimentError> {
                (0..count)
                    .map(|_| {
                        let v = x0.iter().map(|t| t + s * rng.sample::<f64, _>(StandardNormal)).collect();
                        Ok(StateVector::new(v)?)
                    })
                    .collect()
            };
            let x = draw(n_x)?;
            let u = draw(n_u)?;
            Ok((x, u))
        }
        Some(lib) => {
            let x = draw_snapshots(lib, truth.start, n_x, &mut rng)?;
            let u = draw_snapshots(lib, truth.start, n_u, &mut rng)?;
            Ok((x, u))
        }
    }
}

/// One analysis cycle of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub replicate: usize,
    pub time_index: usize,
    pub rmse: f64,
    pub spread: f64,
    pub hr_spread: f64,
    pub condition_number: f64,
    pub lambda: f64,
    pub n_x: usize,
    pub n_u: usize,
}

/// Per-cycle metrics averaged over replicates, and their time averages
/// after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub rmse: Vec<f64>,
    pub spread: Vec<f64>,
    pub hr_spread: Vec<f64>,
    pub averaged_rmse: f64,
    pub averaged_spread: f64,
    pub averaged_hr_spread: f64,
}

impl MetricSeries {
    /// Averages `records` over replicates, then over cycles `> burn_in`.
    pub fn from_records(records: &[CycleRecord], burn_in: usize) -> Self {
        let cycles = records.iter().map(|r| r.time_index).max().unwrap_or(0);
        let mut sums = vec![[0.0; 3]; cycles];
        let mut counts = vec![0usize; cycles];
        for r in records {
            let k = r.time_index - 1;
            sums[k][0] += r.rmse;
            sums[k][1] += r.spread;
            sums[k][2] += r.hr_spread;
            counts[k] += 1;
        }
        let series = |f: usize| -> Vec<f64> { sums.iter().zip(&counts).map(|(s, &c)| s[f] / c as f64).collect() };
        let (rmse, spread, hr_spread) = (series(0), series(1), series(2));
        let tail = |v: &[f64]| {
            let t = &v[burn_in.min(v.len())..];
            if t.is_empty() {
                f64::NAN
            } else {
                t.iter().sum::<f64>() / t.len() as f64
            }
        };
        Self {
            averaged_rmse: tail(&rmse),
            averaged_spread: tail(&spread),
            averaged_hr_spread: tail(&hr_spread),
            rmse,
            spread,
            hr_spread,
        }
    }
}

/// Everything a twin experiment produces.
#[derive(Debug, Clone, Serialize)]
pub struct TwinReport {
    pub config: ExperimentConfig,
    pub generator: &'static str,
    pub artifacts: Vec<Artifact>,
    pub series: MetricSeries,
    /// Time-averaged RMSE of each completed replicate.
    pub replicate_rmse: Vec<f64>,
    #[serde(skip)]
    pub records: Vec<CycleRecord>,
}

/// Root mean squared difference over all state components.
pub fn rmse(a: &StateVector, b: &StateVector) -> f64 {
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

enum FilterState {
    /// One ensemble, propagated by the full model (`hr`) or the surrogate.
    Single { ens: Ensemble, hr: bool },
    Merged { hr: Ensemble, ml: Ensemble },
    Multi(MultiFidelityEnsemble),
}

fn initial_state(
    cfg: &ExperimentConfig,
    x: Vec<StateVector>,
    u: Vec<StateVector>,
) -> Result<FilterState, ExperimentError> {
    let ens = |m: &[StateVector]| Ensemble::from_members(m).map_err(ExperimentError::from);
    Ok(match cfg.filter.variant {
        FilterVariant::EnkfDeterministic | FilterVariant::EnkfPerturbed => FilterState::Single { ens: ens(&x)?, hr: true },
        FilterVariant::BaselineMerged if u.is_empty() => FilterState::Single { ens: ens(&x)?, hr: true },
        FilterVariant::BaselineMerged if x.is_empty() => FilterState::Single { ens: ens(&u)?, hr: false },
        FilterVariant::BaselineMerged => FilterState::Merged { hr: ens(&x)?, ml: ens(&u)? },
        FilterVariant::MfEnkf if u.is_empty() => FilterState::Single { ens: ens(&x)?, hr: true },
        FilterVariant::MfEnkf if x.is_empty() => FilterState::Single { ens: ens(&u)?, hr: false },
        FilterVariant::MfEnkf => {
            let principal = ens(&x)?;
            FilterState::Multi(MultiFidelityEnsemble::new(principal.clone(), principal, ens(&u)?, cfg.filter.lambda)?)
        }
    })
}

fn surrogate_of(models: &Models) -> Result<&CycleModel, ExperimentError> {
    models
        .surrogate
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("this filter needs a surrogate".into()))
}

fn cycle(
    state: FilterState,
    models: &Models,
    assim: &Assimilator,
    cfg: &ExperimentConfig,
    truth: &StateVector,
    replicate: usize,
    t: usize,
) -> Result<(FilterState, AnalysisResult), ExperimentError> {
    let forecast = match state {
        FilterState::Single { ens, hr: true } => FilterState::Single {
            ens: models.full.forecast_ensemble(&ens)?,
            hr: true,
        },
        FilterState::Single { ens, hr: false } => FilterState::Single {
            ens: surrogate_of(models)?.forecast_ensemble(&ens)?,
            hr: false,
        },
        FilterState::Merged { hr, ml } => FilterState::Merged {
            hr: models.full.forecast_ensemble(&hr)?,
            ml: surrogate_of(models)?.forecast_ensemble(&ml)?,
        },
        FilterState::Multi(mf) => FilterState::Multi(mf_enkf_forecast(&mf, &models.full, surrogate_of(models)?)?),
    };
    let id = StreamId::new(StreamPurpose::Observations, cfg.base_seed, replicate as u64, t as u64);
    let obs = generate_observations(truth, assim.operator(), cfg.obs.sigma, t, id.seed_id(), &mut id.rng());
    Ok(match forecast {
        FilterState::Single { ens, hr } => {
            let (post, res) = if cfg.filter.variant == FilterVariant::EnkfPerturbed {
                let mut rng = stream(StreamPurpose::Perturbations, cfg.base_seed, replicate as u64, t as u64);
                assim.enkf_perturbed(&ens, &obs, &mut rng)?
            } else {
                assim.enkf_deterministic(&ens, &obs)?
            };
            (FilterState::Single { ens: post, hr }, res)
        }
        FilterState::Merged { hr, ml } => {
            let (hr, ml, res) = assim.baseline_merged(&hr, Some(&ml), &obs)?;
            let ml = ml.expect("merged analysis returns both parts");
            (FilterState::Merged { hr, ml }, res)
        }
        FilterState::Multi(mf) => {
            let (post, res) = assim.mf_enkf(&mf, &obs)?;
            (FilterState::Multi(post), res)
        }
    })
}

fn is_blow_up(e: &ExperimentError) -> bool {
    matches!(
        e,
        ExperimentError::Model(ModelError::NonFinite { .. })
            | ExperimentError::Model(ModelError::SolverDiverged { .. })
            | ExperimentError::Filter(FilterError::NonFinite)
            | ExperimentError::Filter(FilterError::SingularInnovation)
            | ExperimentError::Filter(FilterError::Model(ModelError::NonFinite { .. }))
            | ExperimentError::Filter(FilterError::Model(ModelError::SolverDiverged { .. }))
    )
}

enum Failure {
    Diverged { cycle: usize, rmse: f64 },
    Error(ExperimentError),
}

/// Runs one replicate, appending a record per cycle.
fn run_replicate(
    cfg: &ExperimentConfig,
    models: &Models,
    assim: &Assimilator,
    truth: &TruthRun,
    replicate: usize,
    records: &mut Vec<CycleRecord>,
) -> Result<(), Failure> {
    let (x, u) = initial_members(cfg, truth, replicate, cfg.n_x, cfg.n_u).map_err(Failure::Error)?;
    let mut state = initial_state(cfg, x, u).map_err(Failure::Error)?;
    let threshold = DIVERGENCE_FACTOR * cfg.obs.sigma;
    let mut above = 0;
    for t in 1..=cfg.cycles() {
        let (next, res) = match cycle(state, models, assim, cfg, &truth.states[t], replicate, t) {
            Ok(v) => v,
            Err(e) if is_blow_up(&e) => return Err(Failure::Diverged { cycle: t, rmse: f64::NAN }),
            Err(e) => return Err(Failure::Error(e)),
        };
        state = next;
        let r = rmse(&res.total_variate_mean, &truth.states[t]);
        records.push(CycleRecord {
            replicate,
            time_index: t,
            rmse: r,
            spread: res.spread,
            hr_spread: res.hr_spread,
            condition_number: res.gain.condition_number,
            lambda: cfg.filter.lambda,
            n_x: cfg.n_x,
            n_u: cfg.n_u,
        });
        above = if r > threshold { above + 1 } else { 0 };
        if above >= DIVERGENCE_CYCLES {
            return Err(Failure::Diverged { cycle: t, rmse: r });
        }
    }
    Ok(())
}

/// Runs all replicates of a twin experiment with pre-built models.
pub fn run_with_models(cfg: &ExperimentConfig, models: &Models, truth: &TruthRun) -> Result<TwinReport, ExperimentError> {
    cfg.validate()?;
    let assim = Assimilator::new(cfg.filter_config()?, observation_operator(cfg)?)?;
    let mut records = Vec::new();
    let mut replicate_rmse = Vec::new();
    let mut artifacts = models.artifacts.clone();
    artifacts.extend(truth.artifacts.iter().cloned());
    let report = |records: Vec<CycleRecord>, replicate_rmse: Vec<f64>| TwinReport {
        config: cfg.clone(),
        generator: GENERATOR_NAME,
        artifacts: artifacts.clone(),
        series: MetricSeries::from_records(&records, cfg.burn_in()),
        replicate_rmse,
        records,
    };
    for replicate in 0..cfg.replicates {
        let start = records.len();
        match run_replicate(cfg, models, &assim, truth, replicate, &mut records) {
            Ok(()) => {}
            Err(Failure::Error(e)) => return Err(e),
            Err(Failure::Diverged { cycle, rmse }) => {
                return Err(ExperimentError::Diverged {
                    replicate,
                    cycle,
                    rmse,
                    partial: Box::new(report(records, replicate_rmse)),
                })
            }
        }
        let tail: Vec<f64> = records[start..]
            .iter()
            .filter(|r| r.time_index > cfg.burn_in())
            .map(|r| r.rmse)
            .collect();
        replicate_rmse.push(tail.iter().sum::<f64>() / tail.len() as f64);
    }
    Ok(report(records, replicate_rmse))
}

/// Builds the models and truth, then runs every replicate.
pub fn run_twin_experiment(cfg: &ExperimentConfig) -> Result<TwinReport, ExperimentError> {
    cfg.validate()?;
    let models = build_models(cfg)?;
    let truth = truth_run(cfg, &models.full)?;
    run_with_models(cfg, &models, &truth)
}
