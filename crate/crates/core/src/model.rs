//! The forward-model interface shared by physical models and surrogates.

use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::ensemble::{Ensemble, EnsembleError, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state became non-finite at component {index}")]
    NonFinite { index: usize },
    #[error("model expects a state of size {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("elliptic solve failed: residual {residual:e}")]
    SolverDiverged { residual: f64 },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Advances a state by one forecast window (the time between two analyses).
pub trait ForwardModel: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError>;

    fn forecast_windows(&self, x: &StateVector, windows: usize) -> Result<StateVector, ModelError> {
        let mut state = x.clone();
        for _ in 0..windows {
            state = self.forecast(&state)?;
        }
        Ok(state)
    }

    /// Propagates every member independently.
    fn forecast_ensemble(&self, e: &Ensemble) -> Result<Ensemble, ModelError> {
        let members = e
            .members()
            .map(|m| self.forecast(&m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Ensemble::from_members(&members)?)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        (**self).forecast(x)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        (**self).forecast(x)
    }
}

pub(crate) fn check_dim(expected: usize, x: &StateVector) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), ModelError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ModelError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Leaves states unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityModel {
    pub n: usize,
}

impl ForwardModel for IdentityModel {
    fn dim(&self) -> usize {
        self.n
    }
    fn name(&self) -> String {
        "identity".into()
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        check_dim(self.n, x)?;
        Ok(x.clone())
    }
}

/// Counts the single-member forecasts made through it.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ForwardModel> ForwardModel for CountingModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn name(&self) -> String {
        self.inner.name()
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.forecast(x)
    }
}
