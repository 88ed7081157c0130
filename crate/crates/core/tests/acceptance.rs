//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- C5 C7` runs a subset.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mfda::ensemble::{Ensemble, MultiFidelityEnsemble, StateVector};
use mfda::experiments::{
    forecast_rmse_study, lambda_sweep, qg_snapshot_library, run_twin_experiment, ExperimentConfig, ExperimentError,
    ModelKind, SurrogateChoice, TwinReport,
};
use mfda::filters::{tie_anomalies, Assimilator, FilterConfig, FilterVariant, SharedGain};
use mfda::io::write_state_file;
use mfda::localization::InflationSpec;
use mfda::lorenz::{self, LorenzParams};
use mfda::observations::{satellite_tracks, ObservationOperator, OperatorDescription, TrackGeometry};
use mfda::qg::{
    arakawa_jacobian, derive_params, DerivationInputs, DimensionlessQGConstants, Grid, HelmholtzSolver,
    QGParams, QgCoefficients, QgDynamics, RESIDUAL_TOLERANCE,
};
use mfda::ObservationBatch;

/// Criteria that currently fail. They still run and print FAIL; an
/// unexpected pass is reported like an unexpected failure.
const KNOWN_FAILURES: &[&str] = &["C8", "C9"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn repo_data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

// C1

fn lorenz96(x: &[f64], forcing: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let at = |k: isize| x[((i as isize + k).rem_euclid(n as isize)) as usize];
            (at(1) - at(-2)) * at(-1) - at(0) + forcing
        })
        .collect()
}

fn c1_reduction_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for (n, forcing) in [(40, 8.0), (960, 15.0)] {
        let p = LorenzParams { n, k: 1, forcing, dt: 0.025 };
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
            let got = lorenz::tendency(&StateVector::new(x.clone()).unwrap(), &p);
            let want = lorenz96(&x, forcing);
            for (a, b) in got.as_slice().iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst < 1e-12, format!("max |Δ| = {worst:.2e} over 200 states (tol 1e-12)"))
}

// C2

fn c2_fixed_points() -> Outcome {
    let p = LorenzParams::default();
    let x = StateVector::constant(p.n, p.forcing);
    let end = lorenz::step_rk4(&x, &p, 1000).unwrap();
    let drift = end.as_slice().iter().map(|v| (v - p.forcing).abs()).fold(0.0, f64::max);

    let consts = DimensionlessQGConstants {
        wind_sign: 0.0,
        ..DimensionlessQGConstants::default()
    };
    let d = QgDynamics::dimensionless(&consts, 128, 1.25).unwrap();
    let s = d.steps(&d.rest_state(), 100).unwrap();
    let qg = s.psi.iter().chain(&s.q).map(|v| v.abs()).fold(0.0, f64::max);
    outcome(
        drift < 1e-10 && qg == 0.0,
        format!("Lorenz drift {drift:.2e} (tol 1e-10), QG max |ψ|,|q| after 100 steps {qg:.1e}"),
    )
}

// C3

struct Instance {
    x: DMatrix<f64>,
    c: DMatrix<f64>,
    u: DMatrix<f64>,
    h: DMatrix<f64>,
    indices: Vec<usize>,
    y: DVector<f64>,
    var: f64,
    lambda: f64,
}

fn random_instance(rng: &mut ChaCha8Rng, lambda: Option<f64>) -> Instance {
    let n = rng.random_range(2..=8);
    let nx = rng.random_range(2..=4);
    let nu = rng.random_range(2..=10);
    let m = rng.random_range(1..=n);
    let mut indices: Vec<usize> = rand::seq::index::sample(rng, n, m).into_vec();
    indices.sort_unstable();
    let mut h = DMatrix::zeros(m, n);
    for (r, &i) in indices.iter().enumerate() {
        h[(r, i)] = 1.0;
    }
    let x = random_matrix(n, nx, rng);
    let c = &x * 0.8 + random_matrix(n, nx, rng) * 0.5;
    let u = random_matrix(n, nu, rng) * 1.2;
    Instance {
        x,
        c,
        u,
        h,
        indices,
        y: DVector::from_fn(m, |_, _| rng.sample(StandardNormal)),
        var: rng.random_range(0.3..2.0),
        lambda: lambda.unwrap_or_else(|| rng.random_range(0.0..=1.0)),
    }
}

fn mean_of(e: &DMatrix<f64>) -> DVector<f64> {
    let mut s = DVector::zeros(e.nrows());
    for j in 0..e.ncols() {
        s += e.column(j);
    }
    s / e.ncols() as f64
}

fn anomalies_of(e: &DMatrix<f64>) -> DMatrix<f64> {
    let mu = mean_of(e);
    let mut a = e.clone();
    for mut col in a.column_iter_mut() {
        col -= &mu;
    }
    a / ((e.ncols() - 1) as f64).sqrt()
}

fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m, k) = (a.nrows(), b.nrows(), a.ncols());
    DMatrix::from_fn(n, m, |i, j| (0..k).map(|l| a[(i, l)] * b[(j, l)]).sum())
}

impl Instance {
    fn mf(&self) -> MultiFidelityEnsemble {
        MultiFidelityEnsemble::new(
            Ensemble::from_matrix(self.x.clone()).unwrap(),
            Ensemble::from_matrix(self.c.clone()).unwrap(),
            Ensemble::from_matrix(self.u.clone()).unwrap(),
            self.lambda,
        )
        .unwrap()
    }

    fn op(&self) -> ObservationOperator {
        ObservationOperator::from_indices(self.x.nrows(), self.indices.clone(), OperatorDescription::Custom).unwrap()
    }

    fn obs(&self) -> ObservationBatch {
        ObservationBatch::new(self.y.clone(), self.var.sqrt(), 1, 0)
    }

    /// `Σ_{A,HB}` terms of the five-term sum, written out.
    fn five_term(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.lambda;
        let (ax, ac, au) = (anomalies_of(&self.x), anomalies_of(&self.c), anomalies_of(&self.u));
        let (hx, hc, hu) = (right * &ax, right * &ac, right * &au);
        let (lx, lc, lu) = (left * &ax, left * &ac, left * &au);
        cross(&lx, &hx) + cross(&lc, &hc) * (l * l) - cross(&lx, &hc) * l - cross(&lc, &hx) * l + cross(&lu, &hu) * (l * l)
    }

    fn gain(&self) -> DMatrix<f64> {
        let n = self.x.nrows();
        let s_zh = self.five_term(&DMatrix::identity(n, n), &self.h);
        let s_hh = self.five_term(&self.h, &self.h);
        let m = self.h.nrows();
        s_zh * (s_hh + DMatrix::identity(m, m) * self.var).try_inverse().unwrap()
    }

    /// Analysis of one ensemble with the shared gain.
    fn analysed(&self, e: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mu = mean_of(e);
        let a = anomalies_of(e);
        let mean = &mu + k * (&self.y - &self.h * &mu);
        let anomalies = &a - k * (&self.h * &a) * 0.5;
        let scale = ((e.ncols() - 1) as f64).sqrt();
        let mut out = anomalies * scale;
        for mut col in out.column_iter_mut() {
            col += &mean;
        }
        out
    }
}

fn literal_config(lambda: f64) -> FilterConfig {
    FilterConfig {
        variant: FilterVariant::MfEnkf,
        lambda,
        inflation: InflationSpec::none(),
        localization: None,
        apply_recentering: false,
        apply_anomaly_tie: false,
    }
}

fn c3_control_variate_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 5];
    for _ in 0..200 {
        let inst = random_instance(&mut rng, None);
        let n = inst.x.nrows();
        let mf = inst.mf();
        let scale = |m: &DMatrix<f64>| 1.0f64.max(m.amax());

        let mu_z = mean_of(&inst.x) - (mean_of(&inst.c) - mean_of(&inst.u)) * inst.lambda;
        let lib_mu = DMatrix::from_column_slice(n, 1, mf.total_variate_mean().as_slice());
        let want = DMatrix::from_column_slice(n, 1, mu_z.as_slice());
        worst[0] = worst[0].max(max_abs_diff(&lib_mu, &want) / scale(&want));

        let zz = inst.five_term(&DMatrix::identity(n, n), &DMatrix::identity(n, n));
        let full = mf.total_variate_covariances(&ObservationOperator::identity(n)).unwrap();
        worst[1] = worst[1].max(max_abs_diff(&full.obs_obs, &zz).max(max_abs_diff(&full.state_obs, &zz)) / scale(&zz));

        let cov = mf.total_variate_covariances(&inst.op()).unwrap();
        let zh = inst.five_term(&DMatrix::identity(n, n), &inst.h);
        let hh = inst.five_term(&inst.h, &inst.h);
        worst[2] = worst[2].max(max_abs_diff(&cov.state_obs, &zh) / scale(&zh));
        worst[2] = worst[2].max(max_abs_diff(&cov.obs_obs, &hh) / scale(&hh));

        let k = inst.gain();
        let lib_k = SharedGain::new(&cov, inst.var, None).unwrap().matrix();
        worst[3] = worst[3].max(max_abs_diff(&lib_k, &k) / scale(&k));

        let assim = Assimilator::new(literal_config(inst.lambda), inst.op()).unwrap();
        let (post, res) = assim.mf_enkf(&mf, &inst.obs()).unwrap();
        let (xa, ca, ua) = (inst.analysed(&inst.x, &k), inst.analysed(&inst.c, &k), inst.analysed(&inst.u, &k));
        for (lib, want) in [(post.principal(), &xa), (post.control(), &ca), (post.ancillary(), &ua)] {
            worst[4] = worst[4].max(max_abs_diff(lib.matrix(), want) / scale(want));
        }
        let za = mean_of(&xa) - (mean_of(&ca) - mean_of(&ua)) * inst.lambda;
        let lib_za = DMatrix::from_column_slice(n, 1, res.total_variate_mean.as_slice());
        let za = DMatrix::from_column_slice(n, 1, za.as_slice());
        worst[4] = worst[4].max(max_abs_diff(&lib_za, &za) / scale(&za));
    }

    let mut lambda_zero = 0.0f64;
    for _ in 0..100 {
        let inst = random_instance(&mut rng, Some(0.0));
        let mf = inst.mf();
        let mut cfg = literal_config(0.0);
        cfg.apply_anomaly_tie = true;
        let (post, _) = Assimilator::new(cfg, inst.op()).unwrap().mf_enkf(&mf, &inst.obs()).unwrap();
        let enkf = Assimilator::new(FilterConfig::deterministic(), inst.op()).unwrap();
        let (x, _) = enkf.enkf_deterministic(mf.principal(), &inst.obs()).unwrap();
        lambda_zero = lambda_zero.max(max_abs_diff(post.principal().matrix(), x.matrix()));
    }
    let all = worst.iter().copied().fold(lambda_zero, f64::max);
    outcome(
        all < 1e-12,
        format!(
            "mean {:.1e}, Σ_ZZ {:.1e}, Σ_Z,HZ/Σ_HZ,HZ {:.1e}, K_Z {:.1e}, members {:.1e}, λ=0 vs EnKF {:.1e} (tol 1e-12)",
            worst[0], worst[1], worst[2], worst[3], worst[4], lambda_zero
        ),
    )
}

// C4

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

fn c4_tied_covariance_psd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    for &lambda in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        for _ in 0..100 {
            let mut inst = random_instance(&mut rng, Some(lambda));
            inst.c = random_matrix(inst.c.nrows(), inst.c.ncols(), &mut rng) * 2.0;
            let n = inst.x.nrows();
            let id = ObservationOperator::identity(n);
            let mf = inst.mf();
            let tied = tie_anomalies(&mf).unwrap();
            worst = worst.min(min_eigenvalue(tied.total_variate_covariances(&id).unwrap().obs_obs));

            let mut cfg = literal_config(lambda);
            cfg.apply_anomaly_tie = true;
            let (post, _) = Assimilator::new(cfg, inst.op()).unwrap().mf_enkf(&mf, &inst.obs()).unwrap();
            worst = worst.min(min_eigenvalue(post.total_variate_covariances(&id).unwrap().obs_obs));
        }
    }
    outcome(
        worst >= -1e-10,
        format!("min eigenvalue {worst:.2e} over 500 instances (tol −1e-10)"),
    )
}

// C5

fn lorenz_config(surrogate: SurrogateChoice, n_x: usize, n_u: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ModelKind::Lorenz2005, surrogate, n_x, n_u);
    cfg.data_dir = Some(repo_data().display().to_string());
    cfg.base_seed = 2024;
    cfg
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn table_check(rows: &[(String, Option<f64>)], targets: &[(&str, f64)], rel: f64) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(name, target) in targets {
        let v = rows.iter().find(|(s, _)| s == name).and_then(|(_, v)| *v).unwrap_or(f64::NAN);
        pass &= within(v, target, rel);
        parts.push(format!("{name} {v:.4} (paper {target}, ±{:.0}%)", rel * 100.0));
    }
    outcome(pass, parts.join(", "))
}

fn c5_lorenz_forecast_table() -> Outcome {
    let cfg = lorenz_config(SurrogateChoice::None, 0, 0);
    let choices = [SurrogateChoice::LowRes(120), SurrogateChoice::LowRes(240), SurrogateChoice::LowRes(480)];
    let rows = forecast_rmse_study(&cfg, &choices, &[6.0], 100).unwrap();
    let rows: Vec<_> = rows.into_iter().map(|r| (r.surrogate, r.rmse)).collect();
    table_check(&rows, &[("m120", 0.34), ("m240", 0.089), ("m480", 0.022)], 0.30)
}

// C6

fn c6_qg_forecast_table() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ModelKind::Qg, SurrogateChoice::None, 0, 0);
    cfg.data_dir = Some(dir.path().display().to_string());
    cfg.base_seed = 2024;
    cfg.qg.snapshot_count = 20;
    let library = qg_snapshot_library(&cfg).unwrap();
    write_state_file(cfg.snapshots_path(), &library).unwrap();
    let choices = [SurrogateChoice::LowRes(32), SurrogateChoice::LowRes(64)];
    let rows = forecast_rmse_study(&cfg, &choices, &[6.0], 20).unwrap();
    let rows: Vec<_> = rows.into_iter().map(|r| (r.surrogate, r.rmse)).collect();
    table_check(&rows, &[("m32", 0.82), ("m64", 0.27)], 0.40)
}

// C7

fn averaged(cfg: &ExperimentConfig) -> f64 {
    match run_twin_experiment(cfg) {
        Ok(r) => r.series.averaged_rmse,
        Err(ExperimentError::Diverged { .. }) => f64::INFINITY,
        Err(e) => panic!("{e}"),
    }
}

fn report_line(r: &TwinReport) -> String {
    let reps: Vec<String> = r.replicate_rmse.iter().map(|v| format!("{v:.3}")).collect();
    format!("{:.4} (replicates {})", r.series.averaged_rmse, reps.join(" "))
}

fn c7_lorenz_nn_twin() -> Outcome {
    let mut cfg = lorenz_config(SurrogateChoice::Nn, 5, 50);
    cfg.filter.lambda = 0.5;
    cfg.filter.recenter = true;
    let main = match run_twin_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("NN run failed: {e}")),
    };
    let rmse = main.series.averaged_rmse;
    if (rmse - 0.44).abs() <= 0.15 {
        return outcome(true, format!("NN (5,50) averaged RMSE {} vs 0.44 ± 0.15", report_line(&main)));
    }
    let lr = averaged(&lorenz_config(SurrogateChoice::LowRes(480), 5, 50));
    let mut enkf = lorenz_config(SurrogateChoice::None, 10, 0);
    enkf.filter.variant = FilterVariant::EnkfDeterministic;
    let base = averaged(&enkf);
    outcome(
        lr < base,
        format!("NN (5,50) RMSE {rmse:.4} outside 0.44 ± 0.15; fallback m480 (5,50) {lr:.4} vs EnKF N_X=10 {base:.4}"),
    )
}

// C8

fn c8_ordering() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n_x in [2, 4, 8] {
        let mut mf_row = Vec::new();
        for n_u in [25, 50, 100] {
            let mut mf = lorenz_config(SurrogateChoice::Nn, n_x, n_u);
            mf.replicates = 2;
            mf.cycles = Some(300);
            mf.burn_in = Some(100);
            mf.filter.recenter = true;
            if n_x == 2 {
                mf.filter.inflation = 1.02;
            }
            let mut base = mf.clone();
            base.filter.variant = FilterVariant::BaselineMerged;
            let (a, b) = (averaged(&mf), averaged(&base));
            if a > 1.05 * b {
                pass = false;
            }
            mf_row.push(a);
            parts.push(format!("({n_x},{n_u}) mf {a:.3} base {b:.3}"));
        }
        if mf_row.windows(2).any(|w| w[1] > 1.05 * w[0]) {
            pass = false;
            parts.push(format!("N_X={n_x} not nonincreasing"));
        }
    }
    outcome(pass, parts.join("; "))
}

// C9

fn c9_lambda_flatness() -> Outcome {
    let mut cfg = lorenz_config(SurrogateChoice::Nn, 4, 20);
    cfg.filter.inflation = 1.01;
    cfg.filter.recenter = true;
    cfg.replicates = 2;
    cfg.cycles = Some(300);
    cfg.burn_in = Some(100);
    let lambdas = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let rows = lambda_sweep(&cfg, &lambdas).unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    let list: Vec<String> = rows.iter().map(|r| format!("{:.1}:{:.3}", r.lambda, r.rmse)).collect();
    outcome(ratio <= 1.25 && ratio.is_finite(), format!("max/min {ratio:.3} (tol 1.25); {}", list.join(" ")))
}

// C10

fn c10_qg_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut residual = 0.0f64;
    for (cells, f) in [(16, 0.0), (64, 1600.0), (128, 1600.0), (128, 37.5)] {
        let grid = Grid::unit(cells);
        let solver = HelmholtzSolver::new(grid, f);
        for _ in 0..3 {
            let mut rhs = grid.zeros();
            for j in 1..cells {
                for i in 1..cells {
                    rhs[grid.idx(i, j)] = rng.sample::<f64, _>(StandardNormal) * 1e3;
                }
            }
            let psi = solver.solve(&rhs).unwrap();
            residual = residual.max(solver.relative_residual(&psi, &rhs));
        }
    }

    let mut jac = 0.0f64;
    for cells in [16, 128] {
        let grid = Grid::unit(cells);
        let a: Vec<f64> = (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = grid.zeros();
        arakawa_jacobian(&grid, &a, &a, &mut out);
        jac = jac.max(out.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }

    let c = QgCoefficients {
        length: 1.0,
        f: 1600.0,
        beta: 0.0,
        c_j: 1e-5,
        a2: 0.0,
        a4: 0.0,
        forcing_amplitude: 0.0,
        dt: 1.25,
    };
    let d = QgDynamics::new(64, c).unwrap();
    let g = *d.grid();
    let bump = g.sample(|x, y| {
        use std::f64::consts::PI;
        50.0 * (PI * x).sin() * (PI * y).sin() * (1.0 + 0.5 * (3.0 * PI * x).sin() * (2.0 * PI * y).cos())
    });
    let s0 = d.state_from_psi(bump);
    let s = d.steps(&s0, 100).unwrap();
    let de = ((d.energy(&s) - d.energy(&s0)) / d.energy(&s0)).abs();
    let dz = ((d.enstrophy(&s) - d.enstrophy(&s0)) / d.enstrophy(&s0)).abs();

    let p = QGParams::default();
    let dim = QgDynamics::dimensional(&p).unwrap();
    let nd = QgDynamics::dimensionless(&p.dimensionless(), p.nx, p.dt_dimensionless()).unwrap();
    let start = nd.steps(&nd.rest_state(), 200).unwrap();
    let scale = p.psi_scale();
    let mut a = start.clone();
    let mut b = dim.state_from_psi(start.psi.iter().map(|v| v * scale).collect());
    for _ in 0..10 {
        a = nd.step(&a).unwrap();
        b = dim.step(&b).unwrap();
    }
    let norm = a.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let equiv = a.psi.iter().zip(&b.psi).map(|(x, y)| (x - y / scale).abs()).fold(0.0, f64::max) / norm;

    outcome(
        residual <= RESIDUAL_TOLERANCE && jac <= 1e-13 && de < 1e-6 && dz < 1e-6 && equiv < 1e-8,
        format!(
            "Helmholtz residual {residual:.1e} (≤1e-10), |J(a,a)| {jac:.1e} (≤1e-13), energy drift {de:.1e}, enstrophy drift {dz:.1e} (<1e-6), dimensional vs dimensionless {equiv:.1e} (<1e-8)"
        ),
    )
}

// C11

/// Agreement within one unit of the last printed digit.
fn agrees(got: f64, printed: f64, digits: i32) -> bool {
    let unit = 10f64.powi(printed.abs().log10().floor() as i32 - digits + 1);
    (got - printed).abs() < unit
}

fn c11_parameter_derivation() -> Outcome {
    let p = derive_params(&DerivationInputs::default());
    let checks = [
        ("H", p.h, 1664.0, 4),
        ("τ0", p.tau0, 1.7e-4, 2),
        ("a4", p.a4, 1e10, 1),
        ("L", p.l / 1e3, 3072.0, 4),
        ("θ", p.theta, 35.0, 2),
        ("f0", p.f0, 8.4e-5, 2),
        ("β", p.beta, 1.88e-11, 3),
    ];
    let pass = checks.iter().all(|&(_, got, want, digits)| agrees(got, want, digits));
    let parts: Vec<String> = checks.iter().map(|(n, got, want, _)| format!("{n} {got:.4e} (paper {want:e})")).collect();
    outcome(pass, parts.join(", "))
}

// C12

fn c12_satellite_tracks() -> Outcome {
    let op = satellite_tracks(&TrackGeometry::default_qg()).unwrap();
    outcome(op.obs_dim() == 344, format!("{} observation nodes (paper 344)", op.obs_dim()))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    ("C1", "Lorenz-2005 K=1 reduces to Lorenz-96", c1_reduction_identity),
    ("C2", "fixed points", c2_fixed_points),
    ("C3", "control-variate algebra", c3_control_variate_algebra),
    ("C4", "tied total-variate covariance is PSD", c4_tied_covariance_psd),
    ("C5", "Lorenz-2005 low-resolution forecast RMSE at 6h", c5_lorenz_forecast_table),
    ("C6", "QG low-resolution forecast RMSE at 6h", c6_qg_forecast_table),
    ("C7", "Lorenz-2005 MF-EnKF twin with the neural surrogate", c7_lorenz_nn_twin),
    ("C8", "monotone in N_U and MF-EnKF ≤ baseline", c8_ordering),
    ("C9", "λ-sweep flatness", c9_lambda_flatness),
    ("C10", "QG numerics", c10_qg_numerics),
    ("C11", "parameter derivation", c11_parameter_derivation),
    ("C12", "satellite track count", c12_satellite_tracks),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    for &(id, name, run) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} {id} {name}: {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        let known = KNOWN_FAILURES.contains(&id);
        if o.pass == known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance outcome for {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
