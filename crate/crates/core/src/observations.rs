//! Observation operators and synthetic observations.
//!
//! Every operator here is a row selection: `H(X)` picks `m` components of the
//! state, so `H` is linear and `R = σ²_obs·I`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::StateVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservationError {
    #[error("{m} equidistant observations do not divide a state of size {n}")]
    IndivisibleGrid { n: usize, m: usize },
    #[error("observation indices must be strictly increasing and below {n}")]
    InvalidIndices { n: usize },
    #[error("track angle {0}° must lie in (0, 90]")]
    InvalidAngle(f64),
    #[error("observation vector has {found} entries, operator expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

/// How an operator's index set was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorDescription {
    Equidistant1D { m: usize },
    SatelliteTracks {
        angle_deg: f64,
        spacing_km: f64,
        count: usize,
    },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    state_dim: usize,
    indices: Vec<usize>,
    description: OperatorDescription,
}

impl ObservationOperator {
    pub fn from_indices(
        state_dim: usize,
        indices: Vec<usize>,
        description: OperatorDescription,
    ) -> Result<Self, ObservationError> {
        let increasing = indices.windows(2).all(|w| w[0] < w[1]);
        if !increasing || indices.last().is_some_and(|&i| i >= state_dim) {
            return Err(ObservationError::InvalidIndices { n: state_dim });
        }
        Ok(Self {
            state_dim,
            indices,
            description,
        })
    }

    /// Observes every component.
    pub fn identity(n: usize) -> Self {
        Self {
            state_dim: n,
            indices: (0..n).collect(),
            description: OperatorDescription::Custom,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn description(&self) -> &OperatorDescription {
        &self.description
    }

    pub fn apply(&self, x: &StateVector) -> DVector<f64> {
        self.apply_slice(x.as_slice())
    }

    pub fn apply_slice(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }

    /// `H·M` for a matrix whose rows live in state space.
    pub fn select_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.indices.iter())
    }
}

/// `m` components at stride `n/m`, starting at index 0.
pub fn equidistant_operator(n: usize, m: usize) -> Result<ObservationOperator, ObservationError> {
    if m == 0 || n % m != 0 {
        return Err(ObservationError::IndivisibleGrid { n, m });
    }
    let stride = n / m;
    Ok(ObservationOperator {
        state_dim: n,
        indices: (0..m).map(|k| k * stride).collect(),
        description: OperatorDescription::Equidistant1D { m },
    })
}

/// Geometry of a family of parallel satellite tracks over a square basin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    /// Cells per side; nodes run `0..=cells`.
    pub cells: usize,
    pub basin_km: f64,
    /// Angle between the tracks and the x axis.
    pub angle_deg: f64,
    /// Horizontal (along x) distance between neighbouring tracks.
    pub spacing_km: f64,
    /// Track offset along x, as a fraction of the spacing.
    pub phase: f64,
    /// Node rings next to the walls that never carry observations.
    pub margin: usize,
}

impl TrackGeometry {
    /// 66° tracks, seven of them across a 3072 km basin of 128 cells.
    pub fn default_qg() -> Self {
        let basin_km = 3072.0;
        Self {
            cells: 128,
            basin_km,
            angle_deg: 66.0,
            spacing_km: basin_km / 7.0,
            phase: 0.3,
            margin: 5,
        }
    }

    pub fn dx_km(&self) -> f64 {
        self.basin_km / self.cells as f64
    }

    /// Node offsets `(i, j)` (x, y) of the selected observation points,
    /// ordered by `j` then `i`.
    ///
    /// Each track is the line `y = tan(θ)·(x − x₀ − k·s)`; for every node
    /// column the nearest node row on each track is taken. Tracks wrap
    /// across the basin because the family is generated for every integer
    /// `k`.
    pub fn nodes(&self) -> Result<Vec<(usize, usize)>, ObservationError> {
        if !(self.angle_deg > 0.0 && self.angle_deg <= 90.0) {
            return Err(ObservationError::InvalidAngle(self.angle_deg));
        }
        let dx = self.dx_km();
        let lo = self.margin;
        let hi = self.cells - self.margin;
        let mut nodes = Vec::new();
        let offset = self.phase * self.spacing_km;
        if (self.angle_deg - 90.0).abs() < 1e-12 {
            // Vertical tracks: whole node columns.
            let mut x = offset.rem_euclid(self.spacing_km);
            while x <= self.basin_km + 1e-9 {
                let i = (x / dx).round() as usize;
                for j in lo..=hi {
                    if (lo..=hi).contains(&i) {
                        nodes.push((i, j));
                    }
                }
                x += self.spacing_km;
            }
        } else {
            let slope = self.angle_deg.to_radians().tan();
            let k_max = ((self.basin_km / self.spacing_km).ceil() as i64) + 1;
            let k_min = -((self.basin_km / (slope * self.spacing_km)).ceil() as i64) - 1;
            for i in lo..=hi {
                let x = i as f64 * dx;
                for k in k_min..=k_max {
                    let y = slope * (x - offset - k as f64 * self.spacing_km);
                    let j = (y / dx).round();
                    if j >= lo as f64 && j <= hi as f64 {
                        nodes.push((i, j as usize));
                    }
                }
            }
        }
        nodes.sort_by_key(|&(i, j)| (j, i));
        nodes.dedup();
        Ok(nodes)
    }
}

/// Nodes along diagonal tracks, expressed as indices into a state vector made
/// of the interior nodes (`1..cells`) in row-major order.
pub fn satellite_tracks(geometry: &TrackGeometry) -> Result<ObservationOperator, ObservationError> {
    let nodes = geometry.nodes()?;
    let side = geometry.cells - 1;
    let mut indices: Vec<usize> = nodes
        .iter()
        .filter(|&&(i, j)| i >= 1 && j >= 1 && i < geometry.cells && j < geometry.cells)
        .map(|&(i, j)| (j - 1) * side + (i - 1))
        .collect();
    indices.sort_unstable();
    let count = indices.len();
    ObservationOperator::from_indices(
        side * side,
        indices,
        OperatorDescription::SatelliteTracks {
            angle_deg: geometry.angle_deg,
            spacing_km: geometry.spacing_km,
            count,
        },
    )
}

/// Observations at one analysis time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub y: DVector<f64>,
    pub sigma_obs: f64,
    pub time_index: usize,
    pub seed_id: u64,
}

impl ObservationBatch {
    pub fn new(
        y: DVector<f64>,
        sigma_obs: f64,
        time_index: usize,
        seed_id: u64,
    ) -> Self {
        Self {
            y,
            sigma_obs,
            time_index,
            seed_id,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn check_against(&self, op: &ObservationOperator) -> Result<(), ObservationError> {
        if self.y.len() != op.obs_dim() {
            return Err(ObservationError::LengthMismatch {
                expected: op.obs_dim(),
                found: self.y.len(),
            });
        }
        Ok(())
    }

    pub fn error_variance(&self) -> f64 {
        self.sigma_obs * self.sigma_obs
    }
}

/// `y = H·truth + σ·z` with `z` standard normal.
pub fn generate_observations<R: Rng + ?Sized>(
    truth: &StateVector,
    op: &ObservationOperator,
    sigma: f64,
    time_index: usize,
    seed_id: u64,
    rng: &mut R,
) -> ObservationBatch {
    let mut y = op.apply(truth);
    if sigma != 0.0 {
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    ObservationBatch::new(y, sigma, time_index, seed_id)
}
