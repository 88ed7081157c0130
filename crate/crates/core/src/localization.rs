//! Gaspari–Cohn covariance localization and multiplicative inflation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::AnomalyMatrix;
use crate::observations::ObservationOperator;

/// The conventional ratio between the Gaspari–Cohn half-width and a
/// localization radius.
pub fn default_scaling() -> f64 {
    (10.0f64 / 3.0).sqrt()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("inflation factor {0} is below 1")]
    InvalidInflation(f64),
    #[error("control inflation {uhat} must equal principal inflation {x}")]
    UntiedInflation { x: f64, uhat: f64 },
    #[error("localization radius {0} must be non-negative")]
    InvalidRadius(f64),
    #[error("operator acts on {found} components, geometry has {expected}")]
    GeometryMismatch { expected: usize, found: usize },
}

/// Fifth-order piecewise rational correlation function of Gaspari and Cohn
/// with half-width `c`: 1 at `d = 0`, 0 for `d ≥ 2c`.
pub fn gc_weight(d: f64, c: f64) -> f64 {
    let z = d.abs() / c;
    if z.is_nan() {
        // 0/0: zero radius and zero distance.
        return 1.0;
    }
    if z <= 1.0 {
        let z2 = z * z;
        let z3 = z2 * z;
        -0.25 * z3 * z2 + 0.5 * z2 * z2 + 0.625 * z3 - (5.0 / 3.0) * z2 + 1.0
    } else if z < 2.0 {
        let z2 = z * z;
        let z3 = z2 * z;
        let w = z3 * z2 / 12.0 - 0.5 * z2 * z2 + 0.625 * z3 + (5.0 / 3.0) * z2 - 5.0 * z + 4.0
            - 2.0 / (3.0 * z);
        w.max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// A ring of `n` points; distances wrap modulo `n`.
    Periodic1D { n: usize },
    /// An `nx × ny` block of grid points in row-major order (x fastest);
    /// Euclidean distances in grid units.
    Grid2D { nx: usize, ny: usize },
}

impl Geometry {
    pub fn len(&self) -> usize {
        match *self {
            Self::Periodic1D { n } => n,
            Self::Grid2D { nx, ny } => nx * ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of state component `k`.
    pub fn point(&self, k: usize) -> [f64; 2] {
        match *self {
            Self::Periodic1D { .. } => [k as f64, 0.0],
            Self::Grid2D { nx, .. } => [(k % nx) as f64, (k / nx) as f64],
        }
    }

    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match *self {
            Self::Periodic1D { n } => {
                let d = (a[0] - b[0]).abs() % n as f64;
                d.min(n as f64 - d)
            }
            Self::Grid2D { .. } => (a[0] - b[0]).hypot(a[1] - b[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub geometry: Geometry,
    /// In grid-index units; `f64::INFINITY` disables localization.
    pub radius: f64,
    #[serde(default = "default_scaling")]
    pub scaling: f64,
}

impl LocalizationSpec {
    pub fn new(geometry: Geometry, radius: f64) -> Result<Self, LocalizationError> {
        if !(radius >= 0.0) {
            return Err(LocalizationError::InvalidRadius(radius));
        }
        Ok(Self {
            geometry,
            radius,
            scaling: default_scaling(),
        })
    }

    /// Gaspari–Cohn half-width `c = radius · scaling`; weights vanish beyond `2c`.
    pub fn half_width(&self) -> f64 {
        self.radius * self.scaling
    }

    pub fn weight(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let c = self.half_width();
        if c.is_infinite() {
            return 1.0;
        }
        gc_weight(self.geometry.distance(a, b), c)
    }
}

/// Localization weights between state and observation points and among
/// observation points.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMatrices {
    pub state_obs: DMatrix<f64>,
    pub obs_obs: DMatrix<f64>,
}

pub fn build_localization(
    spec: &LocalizationSpec,
    state_points: &[[f64; 2]],
    obs_points: &[[f64; 2]],
) -> LocalizationMatrices {
    let n = state_points.len();
    let m = obs_points.len();
    let state_obs = DMatrix::from_fn(n, m, |i, j| spec.weight(state_points[i], obs_points[j]));
    let mut obs_obs = DMatrix::from_element(m, m, 1.0);
    for i in 0..m {
        for j in 0..i {
            let w = spec.weight(obs_points[i], obs_points[j]);
            obs_obs[(i, j)] = w;
            obs_obs[(j, i)] = w;
        }
    }
    LocalizationMatrices { state_obs, obs_obs }
}

/// Localization for an operator acting on the spec's geometry.
pub fn build_for_operator(
    spec: &LocalizationSpec,
    op: &ObservationOperator,
) -> Result<LocalizationMatrices, LocalizationError> {
    if op.state_dim() != spec.geometry.len() {
        return Err(LocalizationError::GeometryMismatch {
            expected: spec.geometry.len(),
            found: op.state_dim(),
        });
    }
    let state: Vec<[f64; 2]> = (0..op.state_dim()).map(|k| spec.geometry.point(k)).collect();
    let obs: Vec<[f64; 2]> = op.indices().iter().map(|&k| state[k]).collect();
    Ok(build_localization(spec, &state, &obs))
}

/// Multiplicative inflation factors for the three variates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationSpec {
    pub alpha_x: f64,
    pub alpha_uhat: f64,
    pub alpha_u: f64,
}

impl InflationSpec {
    pub fn none() -> Self {
        Self::uniform(1.0).expect("1 is a valid factor")
    }

    pub fn uniform(alpha: f64) -> Result<Self, LocalizationError> {
        Self::new(alpha, alpha, alpha)
    }

    pub fn new(alpha_x: f64, alpha_uhat: f64, alpha_u: f64) -> Result<Self, LocalizationError> {
        for a in [alpha_x, alpha_uhat, alpha_u] {
            if !(a >= 1.0) {
                return Err(LocalizationError::InvalidInflation(a));
            }
        }
        if alpha_uhat != alpha_x {
            return Err(LocalizationError::UntiedInflation {
                x: alpha_x,
                uhat: alpha_uhat,
            });
        }
        Ok(Self {
            alpha_x,
            alpha_uhat,
            alpha_u,
        })
    }

    pub fn validate(&self) -> Result<(), LocalizationError> {
        Self::new(self.alpha_x, self.alpha_uhat, self.alpha_u).map(|_| ())
    }
}

impl Default for InflationSpec {
    fn default() -> Self {
        Self::none()
    }
}

pub fn inflate(a: &AnomalyMatrix, alpha: f64) -> Result<AnomalyMatrix, LocalizationError> {
    if !(alpha >= 1.0) {
        return Err(LocalizationError::InvalidInflation(alpha));
    }
    Ok(a.scaled(alpha))
}
