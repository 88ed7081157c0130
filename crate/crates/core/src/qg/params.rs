//! Physical parameters of the reduced-gravity basin and their dimensionless
//! groups.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// Angular speed of the earth, s⁻¹.
pub const EARTH_ANGULAR_SPEED: f64 = 7.2921e-5;
/// Mean earth radius, m.
pub const EARTH_RADIUS: f64 = 6.371e6;
/// Six hours in seconds.
pub const SIX_HOURS: f64 = 6.0 * 3600.0;

/// Dimensionless groups of the single-layer model
/// `q_t = −ψ_x − εJ(ψ,q) − AΔ³ψ + s·2π sin(2πy)`, `q = Δψ − Fψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessQGConstants {
    #[serde(rename = "F")]
    pub f: f64,
    pub epsilon: f64,
    #[serde(rename = "A")]
    pub a: f64,
    /// Sign `s` of the wind-curl forcing; −1 for the stress `τ = −τ0 cos(2πy)`.
    #[serde(default = "default_wind_sign")]
    pub wind_sign: f64,
}

pub(crate) fn default_wind_sign() -> f64 {
    -1.0
}

impl Default for DimensionlessQGConstants {
    fn default() -> Self {
        Self {
            f: 1600.0,
            epsilon: 1e-5,
            a: 2e-12,
            wind_sign: default_wind_sign(),
        }
    }
}

/// Dimensional parameters of the basin (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QGParams {
    /// Coriolis parameter, s⁻¹.
    pub f0: f64,
    /// Its meridional gradient, m⁻¹s⁻¹.
    pub beta: f64,
    /// Reduced gravity, m s⁻².
    pub g_prime: f64,
    /// Layer depth, m.
    pub h: f64,
    /// Kinematic wind stress amplitude (already divided by ρ0), m²s⁻².
    pub tau0: f64,
    /// Laplacian friction, m²s⁻¹.
    pub a2: f64,
    /// Biharmonic friction, m⁴s⁻¹.
    pub a4: f64,
    /// Basin side, m.
    pub l: f64,
    /// Cells per side.
    pub nx: usize,
    pub ny: usize,
    /// Time step, s.
    pub dt: f64,
    /// Latitude, degrees.
    pub theta: f64,
    /// Reference density, kg m⁻³.
    pub rho0: f64,
    #[serde(default = "default_wind_sign")]
    pub wind_sign: f64,
}

impl QGParams {
    pub fn dx(&self) -> f64 {
        self.l / self.nx as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [self.f0, self.beta, self.g_prime, self.h, self.tau0, self.a4, self.l, self.dt, self.rho0];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.a2 >= 0.0) {
            return Err(ModelError::Config("QG parameters must be positive (a2 ≥ 0)".into()));
        }
        if self.nx != self.ny || self.nx < 2 {
            return Err(ModelError::Config(format!(
                "the basin must be square with at least 2 cells (got {}×{})",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    /// `F = f0²L²/(g′H)`, `ε = τ0/(Hβ²L³)`, `A = a4/(βL⁵)`.
    pub fn dimensionless(&self) -> DimensionlessQGConstants {
        DimensionlessQGConstants {
            f: self.f0 * self.f0 * self.l * self.l / (self.g_prime * self.h),
            epsilon: self.tau0 / (self.h * self.beta * self.beta * self.l.powi(3)),
            a: self.a4 / (self.beta * self.l.powi(5)),
            wind_sign: self.wind_sign,
        }
    }

    /// Streamfunction scale `τ0/(Hβ)`, m²s⁻¹.
    pub fn psi_scale(&self) -> f64 {
        self.tau0 / (self.h * self.beta)
    }

    /// Time scale `1/(βL)`, s.
    pub fn time_scale(&self) -> f64 {
        1.0 / (self.beta * self.l)
    }

    /// `Δt` in model time units.
    pub fn dt_dimensionless(&self) -> f64 {
        self.dt / self.time_scale()
    }

    /// Amplitude `2πτ0/(HL)` of the wind-curl term, s⁻².
    pub fn forcing_amplitude(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.tau0 / (self.h * self.l)
    }
}

/// Inputs of [`derive_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivationInputs {
    pub constants: DimensionlessQGConstants,
    pub g_prime: f64,
    /// Dimensionless time step matching `dt_seconds`.
    pub dt_dimensionless: f64,
    pub dt_seconds: f64,
    /// Across-track distance between satellite tracks, km.
    pub track_spacing_km: f64,
    pub track_angle_deg: f64,
    /// Number of track spacings across the basin.
    pub tracks_per_basin: f64,
    pub nx: usize,
}

impl Default for DerivationInputs {
    fn default() -> Self {
        Self {
            constants: DimensionlessQGConstants::default(),
            g_prime: 0.025,
            dt_dimensionless: 1.25,
            dt_seconds: SIX_HOURS,
            track_spacing_km: 400.0,
            track_angle_deg: 66.0,
            tracks_per_basin: 7.0,
            nx: 128,
        }
    }
}

/// Rounds to `digits` significant digits.
fn round_significant(v: f64, digits: i32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

/// Recovers dimensional parameters from the dimensionless groups.
///
/// 1. `L = k·d/sin(θ_track)`, then widened so that `L/nx` is a whole number
///    of kilometres.
/// 2. `β = Δt̃/(Δt·L)`.
/// 3. The latitude follows from `β = 2Ω cos(θ)/R_e` and is rounded to a
///    whole degree; `f0 = 2Ω sin(θ)`, kept to two significant digits.
/// 4. `H = f0²L²/(F g′)`, `τ0 = ε Hβ²L³`, `a4 = A βL⁵`.
pub fn derive_params(inputs: &DerivationInputs) -> QGParams {
    let c = inputs.constants;
    let raw_l_km = inputs.tracks_per_basin * inputs.track_spacing_km / inputs.track_angle_deg.to_radians().sin();
    let dx_km = (raw_l_km / inputs.nx as f64).round();
    let l = dx_km * 1e3 * inputs.nx as f64;
    let beta = inputs.dt_dimensionless / (inputs.dt_seconds * l);
    let cos_theta = beta * EARTH_RADIUS / (2.0 * EARTH_ANGULAR_SPEED);
    let theta = cos_theta.clamp(-1.0, 1.0).acos().to_degrees().round();
    let f0 = round_significant(2.0 * EARTH_ANGULAR_SPEED * theta.to_radians().sin(), 2);
    let h = f0 * f0 * l * l / (c.f * inputs.g_prime);
    let tau0 = c.epsilon * h * beta * beta * l.powi(3);
    let a4 = c.a * beta * l.powi(5);
    QGParams {
        f0,
        beta,
        g_prime: inputs.g_prime,
        h,
        tau0,
        a2: 0.0,
        a4,
        l,
        nx: inputs.nx,
        ny: inputs.nx,
        dt: inputs.dt_seconds,
        theta,
        rho0: 1000.0,
        wind_sign: c.wind_sign,
    }
}

impl Default for QGParams {
    fn default() -> Self {
        derive_params(&DerivationInputs::default())
    }
}
