//! Ensemble storage, sample moments and the control-variate estimator.
//!
//! Ensembles are stored column-per-member in a dense `n × N` matrix. Sample
//! covariances are never formed from raw members; they always go through the
//! scaled [`AnomalyMatrix`], so that `Σ = A·Aᵀ` and cross covariances are
//! `A₁·A₂ᵀ`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::observations::ObservationOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("state vectors must have at least one component")]
    EmptyState,
    #[error("ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("non-finite value at component {index}")]
    NonFinite { index: usize },
    #[error("anomalies need at least 2 members, found {found}")]
    DegenerateEnsemble { found: usize },
    #[error("member count mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("gain parameter lambda = {0} is outside [0, 1]")]
    InvalidLambda(f64),
}

/// One model state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EnsembleError> {
        Self::from_dvector(DVector::from_vec(values))
    }

    pub fn from_dvector(values: DVector<f64>) -> Result<Self, EnsembleError> {
        if values.is_empty() {
            return Err(EnsembleError::EmptyState);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EnsembleError::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Constant state `value` of dimension `n`.
    pub fn constant(n: usize, value: f64) -> Self {
        assert!(n > 0 && value.is_finite());
        Self(DVector::from_element(n, value))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0.data.into()
    }

    pub fn into_dvector(self) -> DVector<f64> {
        self.0
    }
}

/// An ordered collection of members sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    /// Wraps an `n × N` matrix whose columns are the members.
    pub fn from_matrix(members: DMatrix<f64>) -> Result<Self, EnsembleError> {
        if members.ncols() == 0 {
            return Err(EnsembleError::EmptyEnsemble);
        }
        if members.nrows() == 0 {
            return Err(EnsembleError::EmptyState);
        }
        if let Some(index) = members.iter().position(|v| !v.is_finite()) {
            return Err(EnsembleError::NonFinite {
                index: index % members.nrows(),
            });
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[StateVector]) -> Result<Self, EnsembleError> {
        let first = members.first().ok_or(EnsembleError::EmptyEnsemble)?;
        let n = first.len();
        if let Some(bad) = members.iter().find(|m| m.len() != n) {
            return Err(EnsembleError::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        let columns: Vec<DVector<f64>> = members.iter().map(|m| m.0.clone()).collect();
        Ok(Self {
            members: DMatrix::from_columns(&columns),
        })
    }

    /// Rebuilds members as `mean + √(N−1)·A`.
    pub fn from_mean_and_anomalies(
        mean: &StateVector,
        anomalies: &AnomalyMatrix,
    ) -> Result<Self, EnsembleError> {
        if mean.len() != anomalies.dim() {
            return Err(EnsembleError::DimensionMismatch {
                expected: anomalies.dim(),
                found: mean.len(),
            });
        }
        let scale = ((anomalies.size() - 1) as f64).sqrt();
        let mut members = &anomalies.columns * scale;
        for mut col in members.column_iter_mut() {
            col += &mean.0;
        }
        Self::from_matrix(members)
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, i: usize) -> StateVector {
        StateVector(self.members.column(i).into_owned())
    }

    pub fn members(&self) -> impl Iterator<Item = StateVector> + '_ {
        (0..self.size()).map(move |i| self.member(i))
    }

    pub fn mean(&self) -> StateVector {
        ensemble_mean(self)
    }

    pub fn anomalies(&self) -> Result<AnomalyMatrix, EnsembleError> {
        anomalies(self)
    }

    /// Members of `self` followed by the members of `other`.
    pub fn concat(&self, other: &Ensemble) -> Result<Ensemble, EnsembleError> {
        if self.dim() != other.dim() {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let mut m = DMatrix::zeros(self.dim(), self.size() + other.size());
        m.columns_mut(0, self.size()).copy_from(&self.members);
        m.columns_mut(self.size(), other.size())
            .copy_from(&other.members);
        Ok(Ensemble { members: m })
    }

    /// Members `start..start + count` as a new ensemble.
    pub fn split_off(&self, start: usize, count: usize) -> Result<Ensemble, EnsembleError> {
        Ensemble::from_matrix(self.members.columns(start, count).into_owned())
    }

    /// Adds `shift` to every member.
    pub fn shifted(&self, shift: &DVector<f64>) -> Ensemble {
        let mut m = self.members.clone();
        for mut col in m.column_iter_mut() {
            col += shift;
        }
        Ensemble { members: m }
    }
}

/// Member deviations from the mean, scaled by `1/√(N−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMatrix {
    columns: DMatrix<f64>,
}

impl AnomalyMatrix {
    /// Wraps an already scaled anomaly matrix.
    pub fn from_scaled(columns: DMatrix<f64>) -> Self {
        Self { columns }
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn size(&self) -> usize {
        self.columns.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    /// `A·Aᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.columns * self.columns.transpose()
    }

    /// Per-component variance, the diagonal of `A·Aᵀ`.
    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.columns.row_iter().map(|r| r.norm_squared()),
        )
    }

    pub fn scaled(&self, factor: f64) -> AnomalyMatrix {
        AnomalyMatrix {
            columns: &self.columns * factor,
        }
    }
}

fn pairwise_column_sum(m: &DMatrix<f64>, start: usize, len: usize) -> DVector<f64> {
    if len <= 8 {
        let mut acc = DVector::zeros(m.nrows());
        for j in start..start + len {
            acc += m.column(j);
        }
        acc
    } else {
        let half = len / 2;
        pairwise_column_sum(m, start, half) + pairwise_column_sum(m, start + half, len - half)
    }
}

/// Component-wise arithmetic mean over members (pairwise summation).
pub fn ensemble_mean(e: &Ensemble) -> StateVector {
    let sum = pairwise_column_sum(&e.members, 0, e.size());
    StateVector(sum / e.size() as f64)
}

/// `(E − μ)/√(N−1)`.
pub fn anomalies(e: &Ensemble) -> Result<AnomalyMatrix, EnsembleError> {
    let count = e.size();
    if count < 2 {
        return Err(EnsembleError::DegenerateEnsemble { found: count });
    }
    let mean = ensemble_mean(e);
    let scale = 1.0 / ((count - 1) as f64).sqrt();
    let mut columns = e.members.clone();
    for mut col in columns.column_iter_mut() {
        col -= &mean.0;
        col *= scale;
    }
    Ok(AnomalyMatrix { columns })
}

/// Like [`anomalies`], but a one-member ensemble has a zero anomaly column
/// instead of being an error.
pub fn anomalies_or_zero(e: &Ensemble) -> AnomalyMatrix {
    if e.size() == 1 {
        return AnomalyMatrix {
            columns: DMatrix::zeros(e.dim(), 1),
        };
    }
    anomalies(e).expect("two or more members")
}

/// `A·Bᵀ`; only defined for anomaly matrices with the same member count.
pub fn cross_covariance(
    a: &AnomalyMatrix,
    b: &AnomalyMatrix,
) -> Result<DMatrix<f64>, EnsembleError> {
    if a.size() != b.size() {
        return Err(EnsembleError::SizeMismatch {
            left: a.size(),
            right: b.size(),
        });
    }
    Ok(&a.columns * b.columns.transpose())
}

/// Σ_{Z,H(Z)} (`n × m`) and Σ_{H(Z),H(Z)} (`m × m`) of the total variate.
#[derive(Debug, Clone)]
pub struct TotalVariateCovariances {
    pub state_obs: DMatrix<f64>,
    pub obs_obs: DMatrix<f64>,
}

/// The principal (X), control (Û) and ancillary (U) ensembles with gain λ.
///
/// The total variate is `Z = X − λ(Û − U)`. Û is paired member-by-member with
/// X, so both must have the same size; U is independent and usually much
/// larger.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFidelityEnsemble {
    principal: Ensemble,
    control: Ensemble,
    ancillary: Ensemble,
    lambda: f64,
}

impl MultiFidelityEnsemble {
    pub fn new(
        principal: Ensemble,
        control: Ensemble,
        ancillary: Ensemble,
        lambda: f64,
    ) -> Result<Self, EnsembleError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(EnsembleError::InvalidLambda(lambda));
        }
        if principal.size() != control.size() {
            return Err(EnsembleError::SizeMismatch {
                left: principal.size(),
                right: control.size(),
            });
        }
        for other in [&control, &ancillary] {
            if other.dim() != principal.dim() {
                return Err(EnsembleError::DimensionMismatch {
                    expected: principal.dim(),
                    found: other.dim(),
                });
            }
        }
        Ok(Self {
            principal,
            control,
            ancillary,
            lambda,
        })
    }

    pub fn principal(&self) -> &Ensemble {
        &self.principal
    }

    pub fn control(&self) -> &Ensemble {
        &self.control
    }

    pub fn ancillary(&self) -> &Ensemble {
        &self.ancillary
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.principal.dim()
    }

    pub fn into_parts(self) -> (Ensemble, Ensemble, Ensemble, f64) {
        (self.principal, self.control, self.ancillary, self.lambda)
    }

    /// `μ_X − λ(μ_Û − μ_U)`.
    pub fn total_variate_mean(&self) -> StateVector {
        total_variate_mean(self)
    }

    pub fn total_variate_covariances(
        &self,
        op: &ObservationOperator,
    ) -> Result<TotalVariateCovariances, EnsembleError> {
        total_variate_covariances(self, op)
    }
}

pub fn total_variate_mean(mf: &MultiFidelityEnsemble) -> StateVector {
    let mx = ensemble_mean(&mf.principal).0;
    let mc = ensemble_mean(&mf.control).0;
    let ma = ensemble_mean(&mf.ancillary).0;
    StateVector(mx - (mc - ma) * mf.lambda)
}

/// Covariances of the total variate entering the shared Kalman gain.
///
/// The five-term sum
/// `Σ_{X,HX} + λ²Σ_{Û,HÛ} − λΣ_{X,HÛ} − λΣ_{Û,HX} + λ²Σ_{U,HU}` is assembled
/// as `(A_X − λA_Û)(A_HX − λA_HÛ)ᵀ + λ²A_U A_HUᵀ`, which is the same sum with
/// two products instead of five. There is no term coupling U to X or Û.
pub fn total_variate_covariances(
    mf: &MultiFidelityEnsemble,
    op: &ObservationOperator,
) -> Result<TotalVariateCovariances, EnsembleError> {
    if op.state_dim() != mf.dim() {
        return Err(EnsembleError::DimensionMismatch {
            expected: mf.dim(),
            found: op.state_dim(),
        });
    }
    let ax = anomalies(&mf.principal)?;
    let ac = anomalies(&mf.control)?;
    let au = anomalies(&mf.ancillary)?;
    Ok(total_variate_covariances_from_anomalies(
        &ax, &ac, &au, mf.lambda, op,
    ))
}

pub(crate) fn total_variate_covariances_from_anomalies(
    ax: &AnomalyMatrix,
    ac: &AnomalyMatrix,
    au: &AnomalyMatrix,
    lambda: f64,
    op: &ObservationOperator,
) -> TotalVariateCovariances {
    let coupled = ax.matrix() - ac.matrix() * lambda;
    let coupled_obs = op.select_rows(&coupled);
    let anc_obs = op.select_rows(au.matrix());
    let l2 = lambda * lambda;

    let mut state_obs = &coupled * coupled_obs.transpose();
    let mut obs_obs = &coupled_obs * coupled_obs.transpose();
    if l2 != 0.0 {
        state_obs.gemm(l2, au.matrix(), &anc_obs.transpose(), 1.0);
        obs_obs.gemm(l2, &anc_obs, &anc_obs.transpose(), 1.0);
    }
    // Exact symmetry for the later Cholesky factorization.
    let sym = (&obs_obs + obs_obs.transpose()) * 0.5;
    TotalVariateCovariances {
        state_obs,
        obs_obs: sym,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ens(cols: &[&[f64]]) -> Ensemble {
        let members: Vec<StateVector> = cols
            .iter()
            .map(|c| StateVector::new(c.to_vec()).unwrap())
            .collect();
        Ensemble::from_members(&members).unwrap()
    }

    #[test]
    fn mean_of_two_symmetric_members() {
        let e = ens(&[&[1.0, 1.0, 1.0], &[3.0, 3.0, 3.0]]);
        assert_eq!(e.mean().as_slice(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn mean_of_single_member_is_itself() {
        let e = ens(&[&[0.5, -7.0]]);
        assert_eq!(e.mean().as_slice(), &[0.5, -7.0]);
    }

    #[test]
    fn anomalies_of_two_scalar_members() {
        let e = ens(&[&[0.0], &[2.0]]);
        let a = e.anomalies().unwrap();
        assert_eq!(a.matrix().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn anomalies_need_two_members() {
        let e = ens(&[&[0.0, 1.0]]);
        assert_eq!(
            e.anomalies(),
            Err(EnsembleError::DegenerateEnsemble { found: 1 })
        );
    }

    #[test]
    fn identical_members_have_zero_anomalies() {
        let e = ens(&[&[4.0, 2.0], &[4.0, 2.0], &[4.0, 2.0]]);
        assert!(e.anomalies().unwrap().matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_covariance_requires_equal_member_counts() {
        let a = ens(&[&[0.0], &[1.0]]).anomalies().unwrap();
        let b = ens(&[&[0.0], &[1.0], &[2.0]]).anomalies().unwrap();
        assert!(matches!(
            cross_covariance(&a, &b),
            Err(EnsembleError::SizeMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn cross_covariance_with_zero_anomalies_vanishes() {
        let a = ens(&[&[0.0, 3.0], &[1.0, -1.0]]).anomalies().unwrap();
        let z = ens(&[&[5.0], &[5.0]]).anomalies().unwrap();
        let c = cross_covariance(&a, &z).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_variate_mean_hand_example() {
        let mf = MultiFidelityEnsemble::new(
            ens(&[&[2.0], &[4.0]]),
            ens(&[&[1.0], &[3.0]]),
            ens(&[&[0.0], &[2.0], &[4.0]]),
            0.5,
        )
        .unwrap();
        // 3 − 0.5·(2 − 2)
        assert_relative_eq!(mf.total_variate_mean().as_slice()[0], 3.0);
    }

    #[test]
    fn total_variate_mean_ignores_correction_when_control_matches_ancillary() {
        let x = ens(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let c = ens(&[&[7.0, 0.0], &[-2.0, 5.0]]);
        let mf = MultiFidelityEnsemble::new(x.clone(), c.clone(), c, 0.8).unwrap();
        assert_eq!(mf.total_variate_mean(), x.mean());

        let mf0 = MultiFidelityEnsemble::new(
            x.clone(),
            ens(&[&[9.0, 9.0], &[1.0, 1.0]]),
            ens(&[&[0.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]),
            0.0,
        )
        .unwrap();
        assert_eq!(mf0.total_variate_mean(), x.mean());
    }

    #[test]
    fn lambda_outside_unit_interval_is_rejected() {
        let x = ens(&[&[1.0], &[2.0]]);
        for bad in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                MultiFidelityEnsemble::new(x.clone(), x.clone(), x.clone(), bad),
                Err(EnsembleError::InvalidLambda(_))
            ));
        }
    }

    #[test]
    fn mismatched_principal_and_control_sizes_are_rejected() {
        let x = ens(&[&[1.0], &[2.0]]);
        let c = ens(&[&[1.0], &[2.0], &[3.0]]);
        assert!(matches!(
            MultiFidelityEnsemble::new(x, c.clone(), c, 0.5),
            Err(EnsembleError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_state_is_rejected() {
        assert_eq!(
            StateVector::new(vec![1.0, f64::INFINITY]),
            Err(EnsembleError::NonFinite { index: 1 })
        );
        assert_eq!(StateVector::new(vec![]), Err(EnsembleError::EmptyState));
    }

    #[test]
    fn mean_and_anomalies_reconstruct_members() {
        let e = ens(&[&[1.0, 5.0], &[2.0, -3.0], &[0.5, 0.0]]);
        let back = Ensemble::from_mean_and_anomalies(&e.mean(), &e.anomalies().unwrap()).unwrap();
        for (a, b) in back.matrix().iter().zip(e.matrix().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = ens(&[&[1.0], &[2.0]]);
        let b = ens(&[&[3.0], &[4.0], &[5.0]]);
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.size(), 5);
        assert_eq!(ab.split_off(0, 2).unwrap(), a);
        assert_eq!(ab.split_off(2, 3).unwrap(), b);
    }
}
