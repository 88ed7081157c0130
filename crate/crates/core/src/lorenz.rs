//! Lorenz-2005 model II on a periodic ring.
//!
//! ```text
//! dX_i/dt = [X,X]_{K,i} − X_i + F
//! [X,X]_{K,i} = −W_{i−2K} W_{i−K} + Σ′_j (1/K) W_{i−K+j} X_{i+K+j}
//! W_i = Σ′_k X_{i−k} / K
//! ```
//!
//! `Σ′` runs over `−J..=J`; for even `K` it uses `J = K/2` and halves the two
//! end terms, for odd `K` it uses `J = (K−1)/2` and a plain sum. Both sums are
//! evaluated as sliding windows, so a tendency costs `O(n)` regardless of `K`.

use serde::{Deserialize, Serialize};

use crate::ensemble::StateVector;
use crate::model::{check_dim, check_finite, ForwardModel, ModelError};

/// Steps per "year" on the 3-hours-per-step clock (`Δt = 0.025`).
pub const STEPS_PER_YEAR: usize = 365 * 24 / 3;
/// Two years of spin-up.
pub const SPIN_UP_STEPS: usize = 2 * STEPS_PER_YEAR;
/// RK4 steps between observations (6 hours).
pub const STEPS_PER_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub n: usize,
    pub k: usize,
    pub forcing: f64,
    pub dt: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            n: 960,
            k: 32,
            forcing: 15.0,
            dt: 0.025,
        }
    }
}

impl LorenzParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 4 || self.k == 0 || self.dt <= 0.0 {
            return Err(ModelError::Config(format!(
                "Lorenz-2005 needs n ≥ 4, K ≥ 1 and dt > 0 (got n={}, K={}, dt={})",
                self.n, self.k, self.dt
            )));
        }
        if 2 * self.k + self.half_width() > self.n {
            return Err(ModelError::Config(format!(
                "smoothing length K={} is too long for a ring of {}",
                self.k, self.n
            )));
        }
        Ok(())
    }

    /// `J` of the primed sums.
    pub fn half_width(&self) -> usize {
        if self.k % 2 == 0 {
            self.k / 2
        } else {
            (self.k - 1) / 2
        }
    }
}

/// Weights of the primed sum over `−J..=J`; they add up to exactly `K`.
pub fn primed_weights(k: usize) -> Vec<f64> {
    if k % 2 == 0 {
        let j = k / 2;
        let mut w = vec![1.0; 2 * j + 1];
        w[0] = 0.5;
        w[2 * j] = 0.5;
        w
    } else {
        vec![1.0; k]
    }
}

/// Sliding primed sum: `out_i = Σ′_{d=−J..J} v_{i+d}`, indices modulo `n`.
fn primed_window_sum(v: &[f64], k: usize, out: &mut [f64]) {
    let n = v.len();
    let j = if k % 2 == 0 { k / 2 } else { (k - 1) / 2 };
    let at = |i: isize| v[i.rem_euclid(n as isize) as usize];
    let exact = |i: isize| -> f64 { (i - j as isize..=i + j as isize).map(at).sum() };
    // Short windows are summed directly; long ones slide and re-anchor.
    let direct = 2 * j + 1 <= 8;
    let mut s = exact(0);
    for i in 0..n {
        let ii = i as isize;
        if direct || i % 64 == 0 {
            s = exact(ii);
        }
        out[i] = if k % 2 == 0 {
            s - 0.5 * (at(ii - j as isize) + at(ii + j as isize))
        } else {
            s
        };
        s += at(ii + j as isize + 1) - at(ii - j as isize);
    }
}

/// Reusable buffers for the tendency.
#[derive(Debug, Clone)]
pub struct Workspace {
    w: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            w: vec![0.0; n],
            y: vec![0.0; n],
            s: vec![0.0; n],
        }
    }
}

/// `W_i = Σ′_k X_{i−k} / K`.
pub fn smoothed(x: &[f64], k: usize) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    primed_window_sum(x, k, &mut w);
    let inv = 1.0 / k as f64;
    w.iter_mut().for_each(|v| *v *= inv);
    w
}

fn bracket_into(x: &[f64], k: usize, ws: &mut Workspace, out: &mut [f64]) {
    let n = x.len();
    let inv = 1.0 / k as f64;
    primed_window_sum(x, k, &mut ws.w);
    ws.w.iter_mut().for_each(|v| *v *= inv);
    // y_l = W_{l−K} X_{l+K}, so the second term is Σ′_j y_{i+j} / K.
    for l in 0..n {
        ws.y[l] = ws.w[(l + n - k % n) % n] * x[(l + k) % n];
    }
    primed_window_sum(&ws.y, k, &mut ws.s);
    for i in 0..n {
        let a = ws.w[(i + 2 * n - (2 * k) % n) % n];
        let b = ws.w[(i + n - k % n) % n];
        out[i] = -a * b + ws.s[i] * inv;
    }
}

/// `[X,X]_K` for every component.
pub fn bracket(x: &StateVector, k: usize) -> StateVector {
    let n = x.len();
    let mut out = vec![0.0; n];
    bracket_into(x.as_slice(), k, &mut Workspace::new(n), &mut out);
    StateVector::new(out).expect("finite input gives finite bracket")
}

fn tendency_into(x: &[f64], p: &LorenzParams, ws: &mut Workspace, out: &mut [f64]) {
    bracket_into(x, p.k, ws, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += p.forcing - xi;
    }
}

pub fn tendency(x: &StateVector, p: &LorenzParams) -> StateVector {
    let mut out = vec![0.0; x.len()];
    tendency_into(x.as_slice(), p, &mut Workspace::new(x.len()), &mut out);
    StateVector::new(out).expect("finite input gives finite tendency")
}

/// Classical RK4 on a plain slice.
pub struct Rk4 {
    params: LorenzParams,
    ws: Workspace,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(params: LorenzParams) -> Self {
        let n = params.n;
        Self {
            params,
            ws: Workspace::new(n),
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    pub fn params(&self) -> &LorenzParams {
        &self.params
    }

    pub fn step(&mut self, x: &mut [f64]) {
        let dt = self.params.dt;
        let [k1, k2, k3, k4] = &mut self.k;
        tendency_into(x, &self.params, &mut self.ws, k1);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        tendency_into(&self.tmp, &self.params, &mut self.ws, k2);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        tendency_into(&self.tmp, &self.params, &mut self.ws, k3);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + dt * k3[i];
        }
        tendency_into(&self.tmp, &self.params, &mut self.ws, k4);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    pub fn steps(&mut self, x: &mut [f64], n_steps: usize) -> Result<(), ModelError> {
        for _ in 0..n_steps {
            self.step(x);
        }
        check_finite(x)
    }
}

pub fn step_rk4(x: &StateVector, p: &LorenzParams, n_steps: usize) -> Result<StateVector, ModelError> {
    check_dim(p.n, x)?;
    let mut v = x.as_slice().to_vec();
    Rk4::new(*p).steps(&mut v, n_steps)?;
    Ok(StateVector::new(v)?)
}

/// Runs `n_steps` and returns the states after every `stride` steps,
/// starting with the initial state.
pub fn trajectory(
    x0: &StateVector,
    p: &LorenzParams,
    n_steps: usize,
    stride: usize,
) -> Result<Vec<StateVector>, ModelError> {
    check_dim(p.n, x0)?;
    let stride = stride.max(1);
    let mut rk = Rk4::new(*p);
    let mut v = x0.as_slice().to_vec();
    let mut out = vec![x0.clone()];
    let mut done = 0;
    while done < n_steps {
        let chunk = stride.min(n_steps - done);
        rk.steps(&mut v, chunk)?;
        done += chunk;
        if chunk == stride {
            out.push(StateVector::new(v.clone())?);
        }
    }
    Ok(out)
}

/// Subsample-and-interpolate surrogate at `r` points with smoothing length
/// `r / 30`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowResSpec {
    pub r: usize,
}

impl LowResSpec {
    pub const RATIO: usize = 30;

    pub fn new(r: usize, n: usize) -> Result<Self, ModelError> {
        if r == 0 || n % r != 0 || r % Self::RATIO != 0 {
            return Err(ModelError::Config(format!(
                "low-resolution size {r} must divide {n} and be a multiple of {}",
                Self::RATIO
            )));
        }
        Ok(Self { r })
    }

    pub fn k_lr(&self) -> usize {
        self.r / Self::RATIO
    }

    pub fn coarse_params(&self, p: &LorenzParams) -> LorenzParams {
        LorenzParams {
            n: self.r,
            k: self.k_lr(),
            ..*p
        }
    }
}

/// Every `(n/r)`-th component, starting at 0.
pub fn restrict(x: &[f64], r: usize) -> Vec<f64> {
    let stride = x.len() / r;
    x.iter().step_by(stride).copied().collect()
}

/// Periodic linear interpolation from `r` points back to `n`.
pub fn prolong(xc: &[f64], n: usize) -> Vec<f64> {
    let r = xc.len();
    let stride = n / r;
    (0..n)
        .map(|i| {
            let c = i / stride;
            let w = (i % stride) as f64 / stride as f64;
            (1.0 - w) * xc[c] + w * xc[(c + 1) % r]
        })
        .collect()
}

pub fn lowres_step(
    x: &StateVector,
    spec: &LowResSpec,
    p: &LorenzParams,
    n_steps: usize,
) -> Result<StateVector, ModelError> {
    check_dim(p.n, x)?;
    let mut xc = restrict(x.as_slice(), spec.r);
    Rk4::new(spec.coarse_params(p)).steps(&mut xc, n_steps)?;
    Ok(StateVector::new(prolong(&xc, p.n))?)
}

/// The full model as a forecast operator over `steps_per_window` RK4 steps.
#[derive(Debug, Clone, Copy)]
pub struct LorenzModel {
    pub params: LorenzParams,
    pub steps_per_window: usize,
}

impl LorenzModel {
    pub fn new(params: LorenzParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self {
            params,
            steps_per_window: STEPS_PER_WINDOW,
        })
    }
}

impl ForwardModel for LorenzModel {
    fn dim(&self) -> usize {
        self.params.n
    }
    fn name(&self) -> String {
        format!("lorenz2005(n={}, K={})", self.params.n, self.params.k)
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        step_rk4(x, &self.params, self.steps_per_window)
    }
}

/// A low-resolution surrogate as a forecast operator.
#[derive(Debug, Clone, Copy)]
pub struct LowResLorenz {
    pub params: LorenzParams,
    pub spec: LowResSpec,
    pub steps_per_window: usize,
}

impl LowResLorenz {
    pub fn new(params: LorenzParams, r: usize) -> Result<Self, ModelError> {
        params.validate()?;
        let spec = LowResSpec::new(r, params.n)?;
        spec.coarse_params(&params).validate()?;
        Ok(Self {
            params,
            spec,
            steps_per_window: STEPS_PER_WINDOW,
        })
    }
}

impl ForwardModel for LowResLorenz {
    fn dim(&self) -> usize {
        self.params.n
    }
    fn name(&self) -> String {
        format!("m{}", self.spec.r)
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        lowres_step(x, &self.spec, &self.params, self.steps_per_window)
    }
}
