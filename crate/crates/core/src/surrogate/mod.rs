//! Residual neural surrogates `U_k = U_{k−1} + f_NN(U_{k−1})` and the
//! weight container they are loaded from.

mod container;
mod layers;
mod lorenz_cnn;
mod unet;

use std::path::Path;

use thiserror::Error;

pub use container::{
    load_weights, save_weights, Activation, LayerEntry, Manifest, OpKind, PaddingMode, SurrogateKind,
    WeightContainer, FORMAT_VERSION, MAGIC,
};
pub use layers::{conv1d_periodic, maxpool2d, BatchNorm, Conv1d, Conv2d, Linear, TransposedConv2d};
pub use lorenz_cnn::{kernel_widths, lorenz_manifest, reference_lorenz_cnn, zero_lorenz_cnn, LorenzCnn};
pub use unet::{unet_manifest, unet_with, UNet};

use crate::ensemble::StateVector;
use crate::model::{check_finite, ForwardModel, ModelError};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("cannot read weights at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("malformed weight container: {0}")]
    Format(String),
    #[error("layer `{layer}` needs {expected} values, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("declared {expected} parameters, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("surrogate expects a state of size {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl SurrogateError {
    /// True when the weight file itself is absent.
    pub fn is_missing(&self) -> bool {
        matches!(self, SurrogateError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

#[derive(Debug, Clone)]
enum Network {
    Lorenz(LorenzCnn),
    Unet(UNet),
}

/// A loaded surrogate usable wherever a forward model is expected.
#[derive(Debug, Clone)]
pub struct NeuralSurrogate {
    network: Network,
    dim: usize,
    calls_per_window: usize,
    kind: SurrogateKind,
    parameters: usize,
}

impl NeuralSurrogate {
    pub fn new(weights: &WeightContainer, dim: usize) -> Result<Self, SurrogateError> {
        weights.validate()?;
        let network = match weights.manifest.kind {
            SurrogateKind::CnnLorenz => Network::Lorenz(LorenzCnn::from_container(weights)?),
            SurrogateKind::UnetQg => {
                let net = UNet::from_container(weights)?;
                let m = (dim as f64).sqrt().round() as usize;
                if m * m != dim {
                    return Err(SurrogateError::DimensionMismatch { expected: m * m, found: dim });
                }
                net.image_side(m)?;
                Network::Unet(net)
            }
        };
        Ok(Self {
            network,
            dim,
            calls_per_window: weights.manifest.calls_per_window,
            kind: weights.manifest.kind,
            parameters: weights.parameters(),
        })
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self, SurrogateError> {
        Self::new(&load_weights(path)?, dim)
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn parameters(&self) -> usize {
        self.parameters
    }

    pub fn calls_per_window(&self) -> usize {
        self.calls_per_window
    }

    /// One network evaluation `U + f_NN(U)`.
    pub fn call(&self, u: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        if u.len() != self.dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.dim,
                found: u.len(),
            });
        }
        match &self.network {
            Network::Lorenz(net) => Ok(net.forward(u)),
            Network::Unet(net) => net.forward(u),
        }
    }
}

/// `U + f_NN(U)` for a single state.
pub fn surrogate_forward(u: &StateVector, s: &NeuralSurrogate) -> Result<StateVector, SurrogateError> {
    let v = s.call(u.as_slice())?;
    StateVector::new(v).map_err(|e| SurrogateError::Format(e.to_string()))
}

impl ForwardModel for NeuralSurrogate {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        match self.kind {
            SurrogateKind::CnnLorenz => "nn-cnn".into(),
            SurrogateKind::UnetQg => "nn-unet".into(),
        }
    }
    fn forecast(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        let mut u = x.as_slice().to_vec();
        for _ in 0..self.calls_per_window {
            u = self.call(&u).map_err(|e| match e {
                SurrogateError::DimensionMismatch { expected, found } => {
                    ModelError::DimensionMismatch { expected, found }
                }
                other => ModelError::Config(other.to_string()),
            })?;
        }
        check_finite(&u)?;
        Ok(StateVector::new(u)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorenz::{LorenzModel, LorenzParams};

    #[test]
    fn zero_network_forecast_is_identity() {
        let s = NeuralSurrogate::new(&zero_lorenz_cnn(2, 3, 2), 16).unwrap();
        let x = StateVector::new((0..16).map(|i| i as f64).collect()).unwrap();
        assert_eq!(s.forecast(&x).unwrap(), x);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let s = NeuralSurrogate::new(&zero_lorenz_cnn(2, 3, 2), 16).unwrap();
        let x = StateVector::constant(10, 1.0);
        assert!(matches!(s.forecast(&x), Err(ModelError::DimensionMismatch { expected: 16, found: 10 })));
    }

    #[test]
    fn missing_file_is_flagged() {
        let err = NeuralSurrogate::load("/nonexistent/weights.bin", 960).unwrap_err();
        assert!(err.is_missing());
    }

    #[test]
    fn reference_network_tracks_the_full_model_over_a_window() {
        let p = LorenzParams::default();
        let full = LorenzModel::new(p).unwrap();
        let x0 = crate::lorenz::step_rk4(&StateVector::constant(p.n, p.forcing), &p, 0).unwrap();
        let mut x = x0.into_vec();
        x[10] += 1.0;
        let x = full.forecast_windows(&StateVector::new(x).unwrap(), 400).unwrap();
        let s = NeuralSurrogate::new(&reference_lorenz_cnn(&p, 0.0125, 4), p.n).unwrap();
        let a = full.forecast(&x).unwrap();
        let b = s.forecast(&x).unwrap();
        let rmse = (a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / p.n as f64).sqrt();
        assert!(rmse < 0.2, "{rmse}");
    }
}
