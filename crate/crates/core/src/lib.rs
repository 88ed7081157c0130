//! Multi-fidelity ensemble Kalman filtering.
//!
//! The crate couples a small ensemble of expensive model runs with a large
//! ensemble of cheap surrogate runs through a control-variate estimator, and
//! ships everything needed to run twin experiments on two test systems:
//!
//! * [`lorenz`]: the Lorenz-2005 model II ring with RK4 stepping and
//!   subsample/interpolate low-resolution surrogates,
//! * [`qg`]: a reduced-gravity quasi-geostrophic ocean basin solved in
//!   streamfunction/potential-vorticity form,
//! * [`surrogate`]: an inference engine for residual neural surrogates
//!   (periodic 1D CNN and 2D U-Net) loaded from weight container files,
//! * [`filters`]: perturbed-observation and deterministic EnKF, the
//!   multi-fidelity EnKF with its shared total-variate gain, the heuristic
//!   corrections and the naive merged baseline,
//! * [`experiments`]: the twin-experiment driver, sweeps and forecast studies
//!   behind the `mfda` command line tool.
//!
//! The lower layers ([`ensemble`], [`localization`], [`observations`]) are
//! plain value types and pure functions.

pub mod ensemble;
pub mod experiments;
pub mod filters;
pub mod io;
pub mod localization;
pub mod lorenz;
pub mod model;
pub mod observations;
pub mod qg;
pub mod rng;
pub mod surrogate;

pub use ensemble::{
    anomalies, cross_covariance, ensemble_mean, AnomalyMatrix, Ensemble, EnsembleError,
    MultiFidelityEnsemble, StateVector,
};
pub use model::{ForwardModel, ModelError};
pub use observations::{ObservationBatch, ObservationOperator};
