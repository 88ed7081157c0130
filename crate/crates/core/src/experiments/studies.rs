//! Forecast-skill tables and the parameter sweeps built on the twin driver.

use rand::seq::index;
use serde::Serialize;

use super::config::{Accounting, BudgetSection, ExperimentConfig, ModelKind, SurrogateChoice};
use super::twin::{build_models, lorenz_spun_up, load_snapshots, qg_dynamics, rmse, run_with_models, surrogate_model, truth_run, CycleModel};
use super::ExperimentError;
use crate::ensemble::StateVector;
use crate::lorenz::{LorenzModel, LowResLorenz, STEPS_PER_YEAR};
use crate::model::ForwardModel;
use crate::qg::{LowResQG, QGModel};
use crate::rng::{stream, StreamPurpose};

/// Spin-up of each Lorenz-2005 forecast initial condition: 120 days.
pub const FORECAST_SPIN_UP_STEPS: usize = 120 * STEPS_PER_YEAR / 365;

/// Hours per model step.
pub fn step_hours(model: ModelKind) -> f64 {
    match model {
        ModelKind::Lorenz2005 => 3.0,
        ModelKind::Qg => 6.0,
    }
}

/// Advances `lead` model steps in one call, or `None` when the model cannot
/// stop at that lead (a network trained on longer windows).
fn model_for_lead(
    cfg: &ExperimentConfig,
    choice: Option<SurrogateChoice>,
    lead: usize,
) -> Result<Option<Box<dyn ForwardModel>>, ExperimentError> {
    let model: Box<dyn ForwardModel> = match (choice, cfg.model) {
        (None, ModelKind::Lorenz2005) => Box::new(LorenzModel {
            steps_per_window: lead,
            ..LorenzModel::new(cfg.lorenz.params)?
        }),
        (None, ModelKind::Qg) => Box::new(QGModel {
            steps_per_window: lead,
            ..QGModel::new(qg_dynamics(cfg)?)
        }),
        (Some(SurrogateChoice::LowRes(r)), ModelKind::Lorenz2005) => Box::new(LowResLorenz {
            steps_per_window: lead,
            ..LowResLorenz::new(cfg.lorenz.params, r)?
        }),
        (Some(SurrogateChoice::LowRes(r)), ModelKind::Qg) => Box::new(LowResQG {
            steps_per_window: lead,
            ..LowResQG::new(qg_dynamics(cfg)?, r)?
        }),
        (Some(choice), _) => {
            let Some((net, _)) = surrogate_model(cfg, choice)? else {
                return Ok(None);
            };
            let window = cfg.window_steps();
            if lead % window != 0 {
                return Ok(None);
            }
            Box::new(CycleModel::new(net, lead / window))
        }
    };
    Ok(Some(model))
}

/// One entry of a forecast-skill table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub surrogate: String,
    pub lead_hours: f64,
    /// Mean over initial conditions of the RMSE against the full model;
    /// empty when the surrogate cannot forecast to this lead.
    pub rmse: Option<f64>,
    pub initial_conditions: usize,
}

/// Initial conditions of a forecast study: spun-up states for Lorenz-2005,
/// random library snapshots for QG.
pub fn forecast_initial_conditions(cfg: &ExperimentConfig, count: usize) -> Result<Vec<StateVector>, ExperimentError> {
    match cfg.model {
        ModelKind::Lorenz2005 => (0..count)
            .map(|i| lorenz_spun_up(cfg, StreamPurpose::InitialConditions, i as u64, FORECAST_SPIN_UP_STEPS))
            .collect(),
        ModelKind::Qg => {
            let (lib, _) = load_snapshots(cfg)?;
            if count > lib.len() {
                return Err(ExperimentError::Config(format!(
                    "{count} initial conditions requested, the library holds {}",
                    lib.len()
                )));
            }
            let mut rng = stream(StreamPurpose::InitialConditions, cfg.base_seed, 0, 0);
            index::sample(&mut rng, lib.len(), count)
                .into_iter()
                .map(|k| Ok(StateVector::new(lib.states[k].clone())?))
                .collect()
        }
    }
}

/// Mean forecast RMSE of each surrogate against the full model, from the
/// same initial conditions, at each lead time.
pub fn forecast_rmse_study(
    cfg: &ExperimentConfig,
    surrogates: &[SurrogateChoice],
    lead_hours: &[f64],
    initial_conditions: usize,
) -> Result<Vec<ForecastRow>, ExperimentError> {
    let hours = step_hours(cfg.model);
    let ics = forecast_initial_conditions(cfg, initial_conditions)?;
    let mut rows = Vec::new();
    for &lead_h in lead_hours {
        let lead = (lead_h / hours).round() as usize;
        if lead == 0 || ((lead as f64) * hours - lead_h).abs() > 1e-9 {
            return Err(ExperimentError::Config(format!(
                "lead time {lead_h} h is not a positive multiple of the {hours} h model step"
            )));
        }
        let full = model_for_lead(cfg, None, lead)?.expect("the full model reaches every lead");
        let reference = ics.iter().map(|x| full.forecast(x)).collect::<Result<Vec<_>, _>>()?;
        for &choice in surrogates {
            let rmse_mean = match model_for_lead(cfg, Some(choice), lead)? {
                None => None,
                Some(m) => {
                    let mut total = 0.0;
                    for (x, r) in ics.iter().zip(&reference) {
                        total += rmse(&m.forecast(x)?, r);
                    }
                    Some(total / ics.len() as f64)
                }
            };
            rows.push(ForecastRow {
                surrogate: choice.to_string(),
                lead_hours: lead_h,
                rmse: rmse_mean,
                initial_conditions: ics.len(),
            });
        }
    }
    Ok(rows)
}

/// One allocation of a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub n_x: usize,
    pub n_u: usize,
    /// Share of the budget spent on full-model runs, in percent.
    pub hr_percent: f64,
    pub cost: f64,
    pub rmse: f64,
    pub spread: f64,
    pub hr_spread: f64,
    pub diverged: bool,
}

/// `(N_X, N_U)` pairs that spend the budget, with `N_U` maximal for each
/// `N_X = 0, 1, …, ⌊B⌋`. Surrogate-only allocations need `N_U ≥ 2`.
pub fn budget_allocations(budget: f64, speedup: f64, accounting: Accounting) -> Vec<(usize, usize)> {
    (0..=budget.floor().max(0.0) as usize)
        .filter_map(|n_x| accounting.max_surrogates(n_x, budget, speedup).map(|n_u| (n_x, n_u)))
        .filter(|&(n_x, n_u)| n_x > 0 || n_u >= 2)
        .collect()
}

/// Runs every allocation of `budget` (or only those with `N_X` in `only`)
/// on shared models, truth and seeds.
pub fn budget_sweep(
    cfg: &ExperimentConfig,
    budget: f64,
    speedup: f64,
    accounting: Accounting,
    only: Option<&[usize]>,
) -> Result<Vec<BudgetRow>, ExperimentError> {
    if !(speedup > 0.0) {
        return Err(ExperimentError::Config(format!("speedup must be positive, got {speedup}")));
    }
    let models = build_models(cfg)?;
    let truth = truth_run(cfg, &models.full)?;
    let mut rows = Vec::new();
    for (n_x, n_u) in budget_allocations(budget, speedup, accounting) {
        if only.is_some_and(|o| !o.contains(&n_x)) {
            continue;
        }
        let mut run = cfg.clone();
        run.n_x = n_x;
        run.n_u = n_u;
        run.budget = Some(BudgetSection {
            hr_equivalents: budget,
            ml_speedup: speedup,
            accounting,
        });
        let (series, diverged) = match run_with_models(&run, &models, &truth) {
            Ok(r) => (r.series, false),
            Err(ExperimentError::Diverged { partial, .. }) => (partial.series, true),
            Err(e) => return Err(e),
        };
        rows.push(BudgetRow {
            n_x,
            n_u,
            hr_percent: 100.0 * n_x as f64 / budget,
            cost: accounting.cost(n_x, n_u, speedup),
            rmse: if diverged { f64::NAN } else { series.averaged_rmse },
            spread: series.averaged_spread,
            hr_spread: series.averaged_hr_spread,
            diverged,
        });
    }
    Ok(rows)
}

/// Metrics at one value of `λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub rmse: f64,
    pub spread_hr: f64,
    pub spread_mf: f64,
    pub diverged: bool,
}

/// Reruns the configuration at each `λ` on shared models, truth and seeds.
pub fn lambda_sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<LambdaRow>, ExperimentError> {
    if let Some(bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(ExperimentError::Config(format!("λ = {bad} is outside [0, 1]")));
    }
    let models = build_models(cfg)?;
    let truth = truth_run(cfg, &models.full)?;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let mut run = cfg.clone();
        run.filter.lambda = lambda;
        let (series, diverged) = match run_with_models(&run, &models, &truth) {
            Ok(r) => (r.series, false),
            Err(ExperimentError::Diverged { partial, .. }) => (partial.series, true),
            Err(e) => return Err(e),
        };
        rows.push(LambdaRow {
            lambda,
            rmse: if diverged { f64::NAN } else { series.averaged_rmse },
            spread_hr: series.averaged_hr_spread,
            spread_mf: series.averaged_spread,
            diverged,
        });
    }
    Ok(rows)
}
