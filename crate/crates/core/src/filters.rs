//! Analysis steps: perturbed and deterministic EnKF, the multi-fidelity EnKF
//! with one shared total-variate gain, its heuristic corrections, and the
//! merged-ensemble baseline.
//!
//! All variants use `R = σ²_obs·I` and linear row-selection operators, so
//! `H(X)` is formed by selecting rows of the ensemble matrix.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{
    anomalies_or_zero, total_variate_covariances_from_anomalies, AnomalyMatrix, Ensemble,
    EnsembleError, MultiFidelityEnsemble, StateVector, TotalVariateCovariances,
};
use crate::localization::{
    build_for_operator, inflate, InflationSpec, LocalizationError, LocalizationMatrices,
    LocalizationSpec,
};
use crate::model::{ForwardModel, ModelError};
use crate::observations::{ObservationBatch, ObservationError, ObservationOperator};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("innovation covariance is not positive definite even after jitter")]
    SingularInnovation,
    #[error("analysis produced non-finite values")]
    NonFinite,
    #[error("ensemble needs at least {needed} members, found {found}")]
    TooFewMembers { needed: usize, found: usize },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    EnkfPerturbed,
    EnkfDeterministic,
    MfEnkf,
    BaselineMerged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub variant: FilterVariant,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub inflation: InflationSpec,
    #[serde(default)]
    pub localization: Option<LocalizationSpec>,
    #[serde(default)]
    pub apply_recentering: bool,
    #[serde(default = "default_true")]
    pub apply_anomaly_tie: bool,
}

fn default_lambda() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            variant: FilterVariant::MfEnkf,
            lambda: default_lambda(),
            inflation: InflationSpec::none(),
            localization: None,
            apply_recentering: false,
            apply_anomaly_tie: true,
        }
    }
}

impl FilterConfig {
    pub fn deterministic() -> Self {
        Self {
            variant: FilterVariant::EnkfDeterministic,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(EnsembleError::InvalidLambda(self.lambda).into());
        }
        self.inflation.validate()?;
        Ok(())
    }
}

thread_local! {
    static GAIN_BUILDS: Cell<usize> = const { Cell::new(0) };
}

/// Number of gains factorized on the current thread so far.
pub fn gain_builds_on_this_thread() -> usize {
    GAIN_BUILDS.with(|c| c.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainDiagnostics {
    /// 2-norm condition number of the innovation covariance.
    pub condition_number: f64,
    /// Largest `|K_ij|`; only computed when the explicit gain is small enough.
    pub max_abs_gain: Option<f64>,
    pub jitter_applied: bool,
    /// Gains factorized during this analysis.
    pub evaluations: usize,
}

/// `K = (ρ∘Σ_{Z,HZ}) (ρ∘Σ_{HZ,HZ} + R)⁻¹`, held in factored form.
#[derive(Debug, Clone)]
pub struct SharedGain {
    state_obs: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    diagnostics: GainDiagnostics,
}

/// Above this many flops the explicit gain is not formed for diagnostics.
const EXPLICIT_GAIN_FLOPS: usize = 50_000_000;

impl SharedGain {
    pub fn new(
        cov: &TotalVariateCovariances,
        error_variance: f64,
        localization: Option<&LocalizationMatrices>,
    ) -> Result<Self, FilterError> {
        GAIN_BUILDS.with(|c| c.set(c.get() + 1));
        let (state_obs, mut innovation) = match localization {
            Some(loc) => (
                cov.state_obs.component_mul(&loc.state_obs),
                cov.obs_obs.component_mul(&loc.obs_obs),
            ),
            None => (cov.state_obs.clone(), cov.obs_obs.clone()),
        };
        let m = innovation.nrows();
        for i in 0..m {
            innovation[(i, i)] += error_variance;
        }
        if innovation.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        let mut jitter_applied = false;
        let chol = match Cholesky::new(innovation.clone()) {
            Some(c) => c,
            None => {
                jitter_applied = true;
                let jitter = 1e-10 * innovation.trace().abs().max(f64::MIN_POSITIVE) / m as f64;
                for i in 0..m {
                    innovation[(i, i)] += jitter;
                }
                Cholesky::new(innovation.clone()).ok_or(FilterError::SingularInnovation)?
            }
        };
        let condition_number = condition_number(&innovation, &chol);
        let mut gain = Self {
            state_obs,
            chol,
            diagnostics: GainDiagnostics {
                condition_number,
                max_abs_gain: None,
                jitter_applied,
                evaluations: 1,
            },
        };
        if gain.state_obs.nrows() * m * m <= EXPLICIT_GAIN_FLOPS {
            gain.diagnostics.max_abs_gain = Some(gain.matrix().amax());
        }
        Ok(gain)
    }

    pub fn state_dim(&self) -> usize {
        self.state_obs.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.state_obs.ncols()
    }

    /// `K·rhs` for an `m × k` right-hand side.
    pub fn apply(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.state_obs * self.chol.solve(rhs)
    }

    pub fn apply_vector(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.state_obs * self.chol.solve(rhs)
    }

    /// The explicit `n × m` gain.
    pub fn matrix(&self) -> DMatrix<f64> {
        // K = Σ S⁻¹  ⇔  Kᵀ = S⁻¹ Σᵀ.
        self.chol.solve(&self.state_obs.transpose()).transpose()
    }

    pub fn diagnostics(&self) -> GainDiagnostics {
        self.diagnostics
    }
}

fn condition_number(s: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    if s.nrows() <= 512 {
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    } else {
        // Lower bound from the Cholesky diagonal.
        let d = chol.l_dirty().diagonal();
        (d.max() / d.min()).powi(2)
    }
}

/// Diagnostics of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    /// Posterior estimate: the total-variate mean for the MF-EnKF, the
    /// ensemble mean otherwise.
    pub total_variate_mean: StateVector,
    /// `√(mean_i Σ_ii)` of the posterior estimate's ensemble covariance.
    pub spread: f64,
    /// The same for the principal (high-resolution) ensemble alone.
    pub hr_spread: f64,
    pub gain: GainDiagnostics,
}

/// Root of the mean diagonal of `A·Aᵀ`.
pub fn spread_of(a: &AnomalyMatrix) -> f64 {
    (a.matrix().iter().map(|v| v * v).sum::<f64>() / a.dim() as f64).sqrt()
}

/// Spread of the total variate: the diagonal of
/// `(A_X − λA_Û)(A_X − λA_Û)ᵀ + λ²A_U A_Uᵀ`.
pub fn total_variate_spread(ax: &AnomalyMatrix, ac: &AnomalyMatrix, au: &AnomalyMatrix, lambda: f64) -> f64 {
    let coupled = ax.matrix() - ac.matrix() * lambda;
    let sum = coupled.iter().map(|v| v * v).sum::<f64>()
        + lambda * lambda * au.matrix().iter().map(|v| v * v).sum::<f64>();
    (sum / ax.dim() as f64).sqrt()
}

/// The observation-dependent, cycle-independent parts of an analysis.
#[derive(Debug, Clone)]
pub struct Assimilator {
    config: FilterConfig,
    op: ObservationOperator,
    localization: Option<LocalizationMatrices>,
}

impl Assimilator {
    pub fn new(config: FilterConfig, op: ObservationOperator) -> Result<Self, FilterError> {
        config.validate()?;
        let localization = match &config.localization {
            Some(spec) if spec.radius.is_finite() => Some(build_for_operator(spec, &op)?),
            _ => None,
        };
        Ok(Self {
            config,
            op,
            localization,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.op
    }

    pub fn localization(&self) -> Option<&LocalizationMatrices> {
        self.localization.as_ref()
    }

    fn check(&self, e: &Ensemble, obs: &ObservationBatch) -> Result<(), FilterError> {
        obs.check_against(&self.op)?;
        if e.dim() != self.op.state_dim() {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.op.state_dim(),
                found: e.dim(),
            }
            .into());
        }
        Ok(())
    }

    /// Gain of a single ensemble.
    pub fn single_gain(&self, a: &AnomalyMatrix, error_variance: f64) -> Result<SharedGain, FilterError> {
        let a_obs = self.op.select_rows(a.matrix());
        let cov = TotalVariateCovariances {
            state_obs: a.matrix() * a_obs.transpose(),
            obs_obs: &a_obs * a_obs.transpose(),
        };
        SharedGain::new(&cov, error_variance, self.localization.as_ref())
    }

    /// `Xᵃ_i = Xᵇ_i + K(y − H Xᵇ_i − η_i)` with `η_i ~ N(0, R)` drawn per member.
    pub fn enkf_perturbed<R: Rng + ?Sized>(
        &self,
        e: &Ensemble,
        obs: &ObservationBatch,
        rng: &mut R,
    ) -> Result<(Ensemble, AnalysisResult), FilterError> {
        self.check(e, obs)?;
        if e.size() < 2 {
            return Err(FilterError::TooFewMembers { needed: 2, found: e.size() });
        }
        let a = anomalies_or_zero(e);
        let gain = self.single_gain(&a, obs.error_variance())?;
        let hx = self.op.select_rows(e.matrix());
        let mut innov = DMatrix::zeros(self.op.obs_dim(), e.size());
        for j in 0..e.size() {
            for i in 0..self.op.obs_dim() {
                let eta: f64 = rng.sample(StandardNormal);
                innov[(i, j)] = obs.y[i] - hx[(i, j)] - obs.sigma_obs * eta;
            }
        }
        let posterior = Ensemble::from_matrix(e.matrix() + gain.apply(&innov)).map_err(|_| FilterError::NonFinite)?;
        let pa = inflate(&anomalies_or_zero(&posterior), self.config.inflation.alpha_x)?;
        let mean = posterior.mean();
        let posterior = Ensemble::from_mean_and_anomalies(&mean, &pa)?;
        let spread = spread_of(&pa);
        Ok((
            posterior,
            AnalysisResult {
                total_variate_mean: mean,
                spread,
                hr_spread: spread,
                gain: gain.diagnostics(),
            },
        ))
    }

    /// `μᵃ = μᵇ + K(y − μ_H)`, `Aᵃ = Aᵇ − ½ K A_H`, then inflation.
    pub fn enkf_deterministic(
        &self,
        e: &Ensemble,
        obs: &ObservationBatch,
    ) -> Result<(Ensemble, AnalysisResult), FilterError> {
        self.check(e, obs)?;
        let a = anomalies_or_zero(e);
        let gain = self.single_gain(&a, obs.error_variance())?;
        self.enkf_deterministic_with_gain(e, obs, &gain)
    }

    /// Deterministic update of `e` with a precomputed gain.
    pub fn enkf_deterministic_with_gain(
        &self,
        e: &Ensemble,
        obs: &ObservationBatch,
        gain: &SharedGain,
    ) -> Result<(Ensemble, AnalysisResult), FilterError> {
        self.check(e, obs)?;
        let (mean, a) = deterministic_update(&self.op, e, &obs.y, gain)?;
        let a = inflate(&a, self.config.inflation.alpha_x)?;
        let posterior = Ensemble::from_mean_and_anomalies(&mean, &a).map_err(|_| FilterError::NonFinite)?;
        let spread = spread_of(&a);
        Ok((
            posterior,
            AnalysisResult {
                total_variate_mean: mean,
                spread,
                hr_spread: spread,
                gain: gain.diagnostics(),
            },
        ))
    }

    /// One MF-EnKF analysis: shared gain from the total-variate covariances,
    /// the same deterministic update for X, Û and U, inflation, optional
    /// recentering and anomaly tie, then member reconstruction.
    pub fn mf_enkf(
        &self,
        mf: &MultiFidelityEnsemble,
        obs: &ObservationBatch,
    ) -> Result<(MultiFidelityEnsemble, AnalysisResult), FilterError> {
        self.check(mf.principal(), obs)?;
        let lambda = mf.lambda();
        let ax = anomalies_or_zero(mf.principal());
        let ac = anomalies_or_zero(mf.control());
        let au = anomalies_or_zero(mf.ancillary());
        let cov = total_variate_covariances_from_anomalies(&ax, &ac, &au, lambda, &self.op);
        let builds_before = gain_builds_on_this_thread();
        let gain = SharedGain::new(&cov, obs.error_variance(), self.localization.as_ref())?;

        let (nx, nu) = (mf.principal().size(), mf.ancillary().size());
        let m = self.op.obs_dim();
        // One solve for all means and anomalies:
        // [d_X d_Û d_U | A_HX | A_HÛ | A_HU].
        let mut rhs = DMatrix::zeros(m, 3 + 2 * nx + nu);
        let parts = [
            (mf.principal(), &ax),
            (mf.control(), &ac),
            (mf.ancillary(), &au),
        ];
        let mut col = 3;
        for (k, (e, a)) in parts.iter().enumerate() {
            let mu = e.mean();
            let d = &obs.y - self.op.apply(&mu);
            rhs.set_column(k, &d);
            let ah = self.op.select_rows(a.matrix());
            rhs.columns_mut(col, a.size()).copy_from(&ah);
            col += a.size();
        }
        let update = gain.apply(&rhs);
        if update.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite);
        }

        let mut means = Vec::with_capacity(3);
        let mut anoms = Vec::with_capacity(3);
        let mut col = 3;
        for (k, (e, a)) in parts.iter().enumerate() {
            means.push(e.mean().into_dvector() + update.column(k));
            let upd = update.columns(col, a.size());
            anoms.push(AnomalyMatrix::from_scaled(a.matrix() - upd * 0.5));
            col += a.size();
        }
        let infl = self.config.inflation;
        let ax_a = inflate(&anoms[0], infl.alpha_x)?;
        let mut ac_a = inflate(&anoms[1], infl.alpha_uhat)?;
        let au_a = inflate(&anoms[2], infl.alpha_u)?;

        let mu_z = &means[0] - (&means[1] - &means[2]) * lambda;
        if self.config.apply_recentering {
            means[1] = mu_z.clone();
            means[2] = mu_z.clone();
        }
        if self.config.apply_anomaly_tie {
            ac_a = ax_a.clone();
        }

        let rebuild = |mu: &DVector<f64>, a: &AnomalyMatrix| {
            Ensemble::from_mean_and_anomalies(&StateVector::from_dvector(mu.clone())?, a)
        };
        let posterior = MultiFidelityEnsemble::new(
            rebuild(&means[0], &ax_a).map_err(|_| FilterError::NonFinite)?,
            rebuild(&means[1], &ac_a).map_err(|_| FilterError::NonFinite)?,
            rebuild(&means[2], &au_a).map_err(|_| FilterError::NonFinite)?,
            lambda,
        )?;
        debug_assert_eq!(nu, posterior.ancillary().size());
        let mut diagnostics = gain.diagnostics();
        diagnostics.evaluations = gain_builds_on_this_thread() - builds_before;
        Ok((
            posterior,
            AnalysisResult {
                total_variate_mean: StateVector::from_dvector(mu_z).map_err(|_| FilterError::NonFinite)?,
                spread: total_variate_spread(&ax_a, &ac_a, &au_a, lambda),
                hr_spread: spread_of(&ax_a),
                gain: diagnostics,
            },
        ))
    }

    /// Concatenates the two ensembles, runs the deterministic EnKF on the
    /// merged ensemble and splits it back in member order.
    pub fn baseline_merged(
        &self,
        hr: &Ensemble,
        ml: Option<&Ensemble>,
        obs: &ObservationBatch,
    ) -> Result<(Ensemble, Option<Ensemble>, AnalysisResult), FilterError> {
        let Some(ml) = ml else {
            let (post, res) = self.enkf_deterministic(hr, obs)?;
            return Ok((post, None, res));
        };
        let merged = hr.concat(ml)?;
        let (post, mut res) = self.enkf_deterministic(&merged, obs)?;
        let hr_post = post.split_off(0, hr.size())?;
        let ml_post = post.split_off(hr.size(), ml.size())?;
        res.hr_spread = spread_of(&anomalies_or_zero(&hr_post));
        Ok((hr_post, Some(ml_post), res))
    }
}

/// Mean and anomalies after `μ + K(y − Hμ)`, `A − ½ K HA`.
fn deterministic_update(
    op: &ObservationOperator,
    e: &Ensemble,
    y: &DVector<f64>,
    gain: &SharedGain,
) -> Result<(StateVector, AnomalyMatrix), FilterError> {
    let a = anomalies_or_zero(e);
    let mu = e.mean();
    let n_members = a.size();
    let mut rhs = DMatrix::zeros(op.obs_dim(), 1 + n_members);
    rhs.set_column(0, &(y - op.apply(&mu)));
    rhs.columns_mut(1, n_members).copy_from(&op.select_rows(a.matrix()));
    let update = gain.apply(&rhs);
    let mean = StateVector::from_dvector(mu.into_dvector() + update.column(0)).map_err(|_| FilterError::NonFinite)?;
    let anomalies = AnomalyMatrix::from_scaled(a.matrix() - update.columns(1, n_members) * 0.5);
    Ok((mean, anomalies))
}

/// Perturbed-observation EnKF analysis.
pub fn enkf_perturbed_analysis<R: Rng + ?Sized>(
    e: &Ensemble,
    obs: &ObservationBatch,
    op: &ObservationOperator,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<Ensemble, FilterError> {
    Ok(Assimilator::new(cfg.clone(), op.clone())?.enkf_perturbed(e, obs, rng)?.0)
}

/// Deterministic EnKF analysis, optionally with a precomputed gain.
pub fn enkf_deterministic_analysis(
    e: &Ensemble,
    obs: &ObservationBatch,
    op: &ObservationOperator,
    cfg: &FilterConfig,
    gain: Option<&SharedGain>,
) -> Result<Ensemble, FilterError> {
    let assim = Assimilator::new(cfg.clone(), op.clone())?;
    Ok(match gain {
        Some(g) => assim.enkf_deterministic_with_gain(e, obs, g)?.0,
        None => assim.enkf_deterministic(e, obs)?.0,
    })
}

pub fn mf_enkf_analysis(
    mf: &MultiFidelityEnsemble,
    obs: &ObservationBatch,
    op: &ObservationOperator,
    cfg: &FilterConfig,
) -> Result<(MultiFidelityEnsemble, AnalysisResult), FilterError> {
    Assimilator::new(cfg.clone(), op.clone())?.mf_enkf(mf, obs)
}

pub fn baseline_merged_analysis(
    hr: &Ensemble,
    ml: Option<&Ensemble>,
    obs: &ObservationBatch,
    op: &ObservationOperator,
    cfg: &FilterConfig,
) -> Result<(Ensemble, Option<Ensemble>), FilterError> {
    let (h, m, _) = Assimilator::new(cfg.clone(), op.clone())?.baseline_merged(hr, ml, obs)?;
    Ok((h, m))
}

/// Propagates X with the full model and Û, U with the surrogate.
pub fn mf_enkf_forecast<MX: ForwardModel + ?Sized, MU: ForwardModel + ?Sized>(
    mf: &MultiFidelityEnsemble,
    model_x: &MX,
    model_u: &MU,
) -> Result<MultiFidelityEnsemble, FilterError> {
    let x = model_x.forecast_ensemble(mf.principal())?;
    let c = model_u.forecast_ensemble(mf.control())?;
    let u = model_u.forecast_ensemble(mf.ancillary())?;
    Ok(MultiFidelityEnsemble::new(x, c, u, mf.lambda())?)
}

/// `μ_Û, μ_U ← μ_Z`, anomalies untouched.
pub fn recenter_means(mf: &MultiFidelityEnsemble) -> Result<MultiFidelityEnsemble, FilterError> {
    let mu_z = mf.total_variate_mean().into_dvector();
    let shift = |e: &Ensemble| e.shifted(&(&mu_z - e.mean().into_dvector()));
    Ok(MultiFidelityEnsemble::new(
        mf.principal().clone(),
        shift(mf.control()),
        shift(mf.ancillary()),
        mf.lambda(),
    )?)
}

/// `A_Û ← A_X`, keeping `μ_Û`.
pub fn tie_anomalies(mf: &MultiFidelityEnsemble) -> Result<MultiFidelityEnsemble, FilterError> {
    if mf.principal().size() != mf.control().size() {
        return Err(EnsembleError::SizeMismatch {
            left: mf.principal().size(),
            right: mf.control().size(),
        }
        .into());
    }
    let control = Ensemble::from_mean_and_anomalies(&mf.control().mean(), &anomalies_or_zero(mf.principal()))?;
    Ok(MultiFidelityEnsemble::new(
        mf.principal().clone(),
        control,
        mf.ancillary().clone(),
        mf.lambda(),
    )?)
}
