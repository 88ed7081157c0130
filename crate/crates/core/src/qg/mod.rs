//! Single-layer reduced-gravity quasi-geostrophic basin.
//!
//! The prognostic variable is the potential vorticity `q = Δψ − Fψ`; the
//! streamfunction is recovered with a fast Helmholtz solve at every RK4
//! stage. The data-assimilation state is `ψ` on the `(nx−1)²` interior nodes.

mod helmholtz;
mod ops;
mod params;
mod solver;

pub use helmholtz::{HelmholtzSolver, RESIDUAL_TOLERANCE};
pub use ops::{arakawa_jacobian, ddx, jacobian, laplace, laplacian, Grid};
pub use params::{
    derive_params, DerivationInputs, DimensionlessQGConstants, QGParams, EARTH_ANGULAR_SPEED, EARTH_RADIUS,
    SIX_HOURS,
};
pub use solver::{
    lowres_qg_step, prolong, restrict, step_rk4_qg, LowResQG, QGModel, QGState, QgCoefficients, QgDynamics,
    DEFAULT_CELLS, DEFAULT_DT, STEPS_PER_WINDOW,
};

/// Solves `(Δ_h − F)ψ = rhs` on `grid` with `ψ = 0` on the boundary.
pub fn helmholtz_solve(rhs: &[f64], f: f64, grid: Grid) -> Result<Vec<f64>, crate::model::ModelError> {
    HelmholtzSolver::new(grid, f).solve(rhs)
}

/// Mean of `|ψ|` over the western and eastern thirds of the interior.
pub fn zonal_thirds(grid: &Grid, psi: &[f64]) -> (f64, f64) {
    let third = grid.cells / 3;
    let (mut west, mut east, mut count) = (0.0, 0.0, 0usize);
    for j in 1..grid.cells {
        for i in 1..third {
            west += psi[grid.idx(i, j)].abs();
            east += psi[grid.idx(grid.cells - i, j)].abs();
            count += 1;
        }
    }
    (west / count as f64, east / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::StateVector;
    use crate::model::ForwardModel;
    use std::f64::consts::PI;

    fn small(cells: usize) -> QgDynamics {
        QgDynamics::dimensionless(&DimensionlessQGConstants::default(), cells, DEFAULT_DT).unwrap()
    }

    fn bump(g: &Grid, amp: f64) -> Vec<f64> {
        g.sample(|x, y| amp * (PI * x).sin() * (PI * y).sin() * (1.0 + 0.5 * (3.0 * PI * x).sin()))
    }

    #[test]
    fn rest_without_forcing_is_fixed() {
        let mut c = DimensionlessQGConstants::default();
        c.wind_sign = 0.0;
        let d = QgDynamics::dimensionless(&c, 32, DEFAULT_DT).unwrap();
        let s = d.steps(&d.rest_state(), 100).unwrap();
        assert!(s.psi.iter().chain(&s.q).all(|v| *v == 0.0));
    }

    #[test]
    fn zero_steps_leave_state_unchanged() {
        let d = small(16);
        let psi = bump(d.grid(), 0.3);
        assert_eq!(step_rk4_qg(&d, &psi, 0).unwrap(), psi);
    }

    #[test]
    fn rest_tendency_is_pure_forcing() {
        let p = QGParams::default();
        let d = QgDynamics::dimensional(&p).unwrap();
        let g = *d.grid();
        let t = d.tendency(&g.zeros(), &g.zeros());
        let f0 = p.wind_sign * 2.0 * PI * p.tau0 / (p.h * p.l);
        for j in 1..g.cells {
            let expected = f0 * (2.0 * PI * j as f64 * g.h / p.l).sin();
            for i in 1..g.cells {
                assert!((t[g.idx(i, j)] - expected).abs() <= 1e-12 * f0.abs());
            }
        }
    }

    #[test]
    fn dimensional_step_matches_dimensionless_step() {
        let p = QGParams::default();
        let dim = QgDynamics::dimensional(&p).unwrap();
        let nd = QgDynamics::dimensionless(&p.dimensionless(), p.nx, p.dt_dimensionless()).unwrap();
        let s0 = nd.steps(&nd.state_from_psi(bump(nd.grid(), 2.0)), 20).unwrap();
        let scale = p.psi_scale();
        let d0 = dim.state_from_psi(s0.psi.iter().map(|v| v * scale).collect());
        let a = nd.step(&s0).unwrap();
        let b = dim.step(&d0).unwrap();
        let norm = a.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = a.psi.iter().zip(&b.psi).map(|(x, y)| (x - y / scale).abs()).fold(0.0, f64::max);
        assert!(err / norm < 1e-8, "{}", err / norm);
    }

    #[test]
    fn inviscid_unforced_flow_conserves_energy_and_enstrophy() {
        let c = QgCoefficients {
            length: 1.0,
            f: 1600.0,
            beta: 0.0,
            c_j: 1e-5,
            a2: 0.0,
            a4: 0.0,
            forcing_amplitude: 0.0,
            dt: DEFAULT_DT,
        };
        let d = QgDynamics::new(64, c).unwrap();
        let s0 = d.state_from_psi(bump(d.grid(), 50.0));
        let (e0, z0) = (d.energy(&s0), d.enstrophy(&s0));
        let s = d.steps(&s0, 100).unwrap();
        assert!(((d.energy(&s) - e0) / e0).abs() < 1e-6);
        assert!(((d.enstrophy(&s) - z0) / z0).abs() < 1e-6);
        let moved: f64 = s.psi.iter().zip(&s0.psi).map(|(a, b)| (a - b).abs()).sum();
        let size: f64 = s0.psi.iter().map(|a| a.abs()).sum();
        assert!(moved / size > 1e-2);
    }

    #[test]
    fn every_stage_meets_the_residual_bound() {
        let d = small(32);
        let mut s = d.state_from_psi(bump(d.grid(), 1.0));
        for _ in 0..20 {
            s = d.step(&s).unwrap();
            assert!(d.solver().relative_residual(&s.psi, &s.q) <= RESIDUAL_TOLERANCE);
        }
    }

    #[test]
    fn restrict_then_prolong_is_exact_for_bilinear_fields() {
        let fine = Grid::unit(16);
        let coarse = Grid::unit(4);
        let mut f = fine.zeros();
        for j in 0..=16 {
            for i in 0..=16 {
                let (x, y) = (i as f64 * fine.h, j as f64 * fine.h);
                f[fine.idx(i, j)] = 1.0 + 2.0 * x - y + 3.0 * x * y;
            }
        }
        let back = prolong(&coarse, &fine, &restrict(&fine, &coarse, &f));
        assert!(back.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn lowres_at_full_resolution_is_the_full_model() {
        let d = small(16);
        let lr = LowResQG::new(d.clone(), 16).unwrap();
        let full = QGModel::new(d);
        let x = StateVector::new(full.dynamics.grid().interior_values(&bump(full.dynamics.grid(), 1.0))).unwrap();
        assert_eq!(lr.forecast(&x).unwrap(), full.forecast(&x).unwrap());
    }

    #[test]
    fn lowres_rejects_non_dividing_grid() {
        assert!(LowResQG::new(small(16), 5).is_err());
    }

    #[test]
    fn model_dimension_is_interior() {
        let m = QGModel::default_basin().unwrap();
        assert_eq!(m.dim(), 127 * 127);
    }
}
