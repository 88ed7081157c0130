//! Time stepping of `q_t = −βψ_x − c_J J(ψ,q) + a2Δ²ψ − a4Δ³ψ + F0 sin(ky)`
//! with `q = Δψ − Fψ`, `ψ = Δψ = 0` on the boundary.

use super::helmholtz::HelmholtzSolver;
use super::ops::{arakawa_jacobian, ddx, laplacian, Grid};
use super::params::{DimensionlessQGConstants, QGParams};
use crate::ensemble::StateVector;
use crate::model::{check_dim, check_finite, ForwardModel, ModelError};

/// Model steps between two analyses.
pub const STEPS_PER_WINDOW: usize = 4;
/// Default cells per side.
pub const DEFAULT_CELLS: usize = 128;
/// Dimensionless time step equal to six hours.
pub const DEFAULT_DT: f64 = 1.25;

/// Coefficients of one formulation on one grid.
#[derive(Debug, Clone)]
pub struct QgDynamics {
    grid: Grid,
    length: f64,
    f: f64,
    beta: f64,
    c_j: f64,
    a2: f64,
    a4: f64,
    forcing_amplitude: f64,
    dt: f64,
    forcing: Vec<f64>,
    solver: HelmholtzSolver,
}

/// Prognostic `q` with its diagnosed streamfunction, both on all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QGState {
    pub psi: Vec<f64>,
    pub q: Vec<f64>,
}

/// Coefficients of the generic equation, for custom formulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QgCoefficients {
    pub length: f64,
    pub f: f64,
    pub beta: f64,
    pub c_j: f64,
    pub a2: f64,
    pub a4: f64,
    pub forcing_amplitude: f64,
    pub dt: f64,
}

impl QgDynamics {
    pub fn new(cells: usize, c: QgCoefficients) -> Result<Self, ModelError> {
        if cells < 2 {
            return Err(ModelError::Config(format!("QG grid needs at least 2 cells, got {cells}")));
        }
        let values = [c.length, c.f, c.beta, c.c_j, c.a2, c.a4, c.forcing_amplitude, c.dt];
        if values.iter().any(|v| !v.is_finite()) || c.length <= 0.0 || c.dt <= 0.0 {
            return Err(ModelError::Config("QG coefficients must be finite with positive L and dt".into()));
        }
        let grid = Grid::new(cells, c.length / cells as f64);
        let k = 2.0 * std::f64::consts::PI / c.length;
        let forcing = grid.sample(|_, y| c.forcing_amplitude * (k * y).sin());
        Ok(Self {
            grid,
            length: c.length,
            f: c.f,
            beta: c.beta,
            c_j: c.c_j,
            a2: c.a2,
            a4: c.a4,
            forcing_amplitude: c.forcing_amplitude,
            dt: c.dt,
            forcing,
            solver: HelmholtzSolver::new(grid, c.f),
        })
    }

    /// `q_t = −ψ_x − εJ(ψ,q) − AΔ³ψ + s·2π sin(2πy)` on the unit square.
    pub fn dimensionless(c: &DimensionlessQGConstants, cells: usize, dt: f64) -> Result<Self, ModelError> {
        Self::new(
            cells,
            QgCoefficients {
                length: 1.0,
                f: c.f,
                beta: 1.0,
                c_j: c.epsilon,
                a2: 0.0,
                a4: c.a,
                forcing_amplitude: c.wind_sign * 2.0 * std::f64::consts::PI,
                dt,
            },
        )
    }

    /// The SI form with `F = f0²/(g′H)` and `F0 = 2πτ0/(HL)`.
    pub fn dimensional(p: &QGParams) -> Result<Self, ModelError> {
        p.validate()?;
        Self::new(
            p.nx,
            QgCoefficients {
                length: p.l,
                f: p.f0 * p.f0 / (p.g_prime * p.h),
                beta: p.beta,
                c_j: 1.0,
                a2: p.a2,
                a4: p.a4,
                forcing_amplitude: p.wind_sign * p.forcing_amplitude(),
                dt: p.dt,
            },
        )
    }

    /// The same physics on a grid with `cells` cells per side.
    pub fn regrid(&self, cells: usize) -> Result<Self, ModelError> {
        Self::new(cells, self.coefficients())
    }

    pub fn coefficients(&self) -> QgCoefficients {
        QgCoefficients {
            length: self.length,
            f: self.f,
            beta: self.beta,
            c_j: self.c_j,
            a2: self.a2,
            a4: self.a4,
            forcing_amplitude: self.forcing_amplitude,
            dt: self.dt,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn solver(&self) -> &HelmholtzSolver {
        &self.solver
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `q = Δψ − Fψ`.
    pub fn potential_vorticity(&self, psi: &[f64]) -> Vec<f64> {
        let mut q = self.grid.zeros();
        self.solver.apply(psi, &mut q);
        q
    }

    pub fn state_from_psi(&self, psi: Vec<f64>) -> QGState {
        let q = self.potential_vorticity(&psi);
        QGState { psi, q }
    }

    pub fn rest_state(&self) -> QGState {
        QGState {
            psi: self.grid.zeros(),
            q: self.grid.zeros(),
        }
    }

    pub fn invert(&self, q: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.solver.solve(q)
    }

    /// `dq/dt` for a consistent pair `(ψ, q)`.
    pub fn tendency(&self, psi: &[f64], q: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = g.zeros();
        let mut tmp = g.zeros();
        arakawa_jacobian(g, psi, q, &mut tmp);
        for (o, j) in out.iter_mut().zip(&tmp) {
            *o = -self.c_j * j;
        }
        if self.beta != 0.0 {
            ddx(g, psi, &mut tmp);
            for (o, d) in out.iter_mut().zip(&tmp) {
                *o -= self.beta * d;
            }
        }
        if self.a2 != 0.0 || self.a4 != 0.0 {
            let mut lap = g.zeros();
            laplacian(g, psi, &mut lap);
            laplacian(g, &lap, &mut tmp);
            if self.a2 != 0.0 {
                for (o, d) in out.iter_mut().zip(&tmp) {
                    *o += self.a2 * d;
                }
            }
            if self.a4 != 0.0 {
                laplacian(g, &tmp, &mut lap);
                for (o, d) in out.iter_mut().zip(&lap) {
                    *o -= self.a4 * d;
                }
            }
        }
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
        out
    }

    /// One classical RK4 step; `ψ` is re-inverted at every stage.
    pub fn step(&self, s: &QGState) -> Result<QGState, ModelError> {
        let dt = self.dt;
        let stage = |base: &[f64], k: &[f64], w: f64| -> Vec<f64> {
            base.iter().zip(k).map(|(b, d)| b + w * d).collect()
        };
        let k1 = self.tendency(&s.psi, &s.q);
        let q2 = stage(&s.q, &k1, 0.5 * dt);
        let k2 = self.tendency(&self.invert(&q2)?, &q2);
        let q3 = stage(&s.q, &k2, 0.5 * dt);
        let k3 = self.tendency(&self.invert(&q3)?, &q3);
        let q4 = stage(&s.q, &k3, dt);
        let k4 = self.tendency(&self.invert(&q4)?, &q4);
        let q: Vec<f64> = (0..s.q.len())
            .map(|i| s.q[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        check_finite(&q)?;
        let psi = self.invert(&q)?;
        Ok(QGState { psi, q })
    }

    pub fn steps(&self, s: &QGState, n: usize) -> Result<QGState, ModelError> {
        let mut state = s.clone();
        for _ in 0..n {
            state = self.step(&state)?;
        }
        Ok(state)
    }

    /// `−½Σψq·h²`, the kinetic plus available potential energy.
    pub fn energy(&self, s: &QGState) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        -0.5 * s.psi.iter().zip(&s.q).map(|(p, q)| p * q).sum::<f64>() * h2
    }

    /// `½Σq²·h²`.
    pub fn enstrophy(&self, s: &QGState) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        0.5 * s.q.iter().map(|q| q * q).sum::<f64>() * h2
    }
}

/// Advances `ψ` given on all nodes by `n_steps`.
pub fn step_rk4_qg(dynamics: &QgDynamics, psi: &[f64], n_steps: usize) -> Result<Vec<f64>, ModelError> {
    let s = dynamics.state_from_psi(psi.to_vec());
    Ok(dynamics.steps(&s, n_steps)?.psi)
}

/// Samples the fine field at coincident coarse nodes.
pub fn restrict(fine: &Grid, coarse: &Grid, psi: &[f64]) -> Vec<f64> {
    let r = fine.cells / coarse.cells;
    let mut out = coarse.zeros();
    for j in 0..coarse.nodes() {
        for i in 0..coarse.nodes() {
            out[coarse.idx(i, j)] = psi[fine.idx(i * r, j * r)];
        }
    }
    out
}

/// Bilinear interpolation from coarse to fine nodes.
pub fn prolong(coarse: &Grid, fine: &Grid, psi: &[f64]) -> Vec<f64> {
    let r = fine.cells / coarse.cells;
    let inv = 1.0 / r as f64;
    let mut out = fine.zeros();
    for jf in 0..fine.nodes() {
        let jc = (jf / r).min(coarse.cells - 1);
        let ty = (jf - jc * r) as f64 * inv;
        for if_ in 0..fine.nodes() {
            let ic = (if_ / r).min(coarse.cells - 1);
            let tx = (if_ - ic * r) as f64 * inv;
            let v00 = psi[coarse.idx(ic, jc)];
            let v10 = psi[coarse.idx(ic + 1, jc)];
            let v01 = psi[coarse.idx(ic, jc + 1)];
            let v11 = psi[coarse.idx(ic + 1, jc + 1)];
            out[fine.idx(if_, jf)] =
                (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        }
    }
    out
}

/// Injects `ψ` onto `coarse`, steps there and interpolates back.
pub fn lowres_qg_step(
    fine: &QgDynamics,
    coarse: &QgDynamics,
    psi: &[f64],
    n_steps: usize,
) -> Result<Vec<f64>, ModelError> {
    if fine.grid.cells == coarse.grid.cells {
        return step_rk4_qg(fine, psi, n_steps);
    }
    if fine.grid.cells % coarse.grid.cells != 0 {
        return Err(ModelError::Config(format!(
            "coarse grid {} does not divide fine grid {}",
            coarse.grid.cells, fine.grid.cells
        )));
    }
    let c = restrict(&fine.grid, &coarse.grid, psi);
    let stepped = step_rk4_qg(coarse, &c, n_steps)?;
    Ok(prolong(&coarse.grid, &fine.grid, &stepped))
}

/// The full-resolution basin as a forecast operator on interior `ψ`.
#[derive(Debug, Clone)]
pub struct QGModel {
    pub dynamics: QgDynamics,
    pub steps_per_window: usize,
}

impl QGModel {
    pub fn new(dynamics: QgDynamics) -> Self {
        Self {
            dynamics,
            steps_per_window: STEPS_PER_WINDOW,
        }
    }

    /// The dimensionless default basin at 128 cells and six-hour steps.
    pub fn default_basin() -> Result<Self, ModelError> {
        Ok(Self::new(QgDynamics::dimensionless(
            &DimensionlessQGConstants::default(),
            DEFAULT_CELLS,
            DEFAULT_DT,
        )?))
    }

    pub fn advance(&self, s: &QGState, windows: usize) -> Result<QGState, ModelError> {
        self.dynamics.steps(s, windows * self.steps_per_window)
    }
}

impl ForwardModel for QGModel {
    fn dim(&self) -> usize {
        self.dynamics.grid.interior().pow(2)
    }
    fn name(&self) -> String {
        format!("qg{}", self.dynamics.grid.cells)
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        check_dim(self.dim(), x)?;
        let g = self.dynamics.grid;
        let psi = step_rk4_qg(&self.dynamics, &g.from_interior(x.as_slice()), self.steps_per_window)?;
        Ok(StateVector::new(g.interior_values(&psi))?)
    }
}

/// A coarse-grid surrogate acting on the fine interior `ψ`.
#[derive(Debug, Clone)]
pub struct LowResQG {
    pub fine: QgDynamics,
    pub coarse: QgDynamics,
    pub steps_per_window: usize,
}

impl LowResQG {
    pub fn new(fine: QgDynamics, cells: usize) -> Result<Self, ModelError> {
        if cells == 0 || fine.grid.cells % cells != 0 || cells < 2 {
            return Err(ModelError::Config(format!(
                "coarse grid {cells} must divide fine grid {}",
                fine.grid.cells
            )));
        }
        let coarse = fine.regrid(cells)?;
        Ok(Self {
            fine,
            coarse,
            steps_per_window: STEPS_PER_WINDOW,
        })
    }
}

impl ForwardModel for LowResQG {
    fn dim(&self) -> usize {
        self.fine.grid.interior().pow(2)
    }
    fn name(&self) -> String {
        format!("m{}", self.coarse.grid.cells)
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        check_dim(self.dim(), x)?;
        let g = self.fine.grid;
        let psi = lowres_qg_step(&self.fine, &self.coarse, &g.from_interior(x.as_slice()), self.steps_per_window)?;
        Ok(StateVector::new(g.interior_values(&psi))?)
    }
}
