//! Weight container file format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "MFDAWGT1"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     manifest length L in bytes, u64 little-endian
//! 20      L     manifest, UTF-8 JSON
//! 20+L    ...   tensors as little-endian f32, one blob per layer in manifest order
//! ```
//!
//! Blob layouts per `op`:
//!
//! | op | `shape` | blob |
//! |----|---------|------|
//! | `conv1d` | `[c_out, c_in, k]` | weights row-major, then `c_out` biases |
//! | `conv2d` | `[c_out, c_in, kh, kw]` | weights row-major, then `c_out` biases |
//! | `transposed_conv2d` | `[c_in, c_out, kh, kw]` | weights row-major, then `c_out` biases |
//! | `batch_norm` | `[c]` | `γ`, `β`, running mean, running variance |
//! | `linear` | `[out, in]` | weights row-major, then `out` biases |
//!
//! The parameter count excludes batch-norm running statistics.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SurrogateError;

pub const MAGIC: &[u8; 8] = b"MFDAWGT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv1d,
    Conv2d,
    TransposedConv2d,
    BatchNorm,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    Periodic,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    CnnLorenz,
    UnetQg,
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub op: OpKind,
    pub shape: Vec<usize>,
    pub padding: PaddingMode,
    pub activation: Activation,
    /// Batch-norm variance offset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl LayerEntry {
    fn expect_rank(&self, rank: usize) -> Result<(), SurrogateError> {
        if self.shape.len() != rank || self.shape.iter().any(|d| *d == 0) {
            return Err(SurrogateError::Format(format!(
                "layer `{}`: {:?} needs {} positive dimensions, got {:?}",
                self.name, self.op, rank, self.shape
            )));
        }
        Ok(())
    }

    pub fn check_shape(&self) -> Result<(), SurrogateError> {
        match self.op {
            OpKind::Conv1d => self.expect_rank(3),
            OpKind::Conv2d | OpKind::TransposedConv2d => self.expect_rank(4),
            OpKind::BatchNorm => self.expect_rank(1),
            OpKind::Linear => self.expect_rank(2),
        }
    }

    /// Number of stored f32 values.
    pub fn stored_len(&self) -> usize {
        let product: usize = self.shape.iter().product();
        match self.op {
            OpKind::Conv1d | OpKind::Conv2d | OpKind::Linear => product + self.shape[0],
            OpKind::TransposedConv2d => product + self.shape[1],
            OpKind::BatchNorm => 4 * self.shape[0],
        }
    }

    /// Number of trainable parameters.
    pub fn parameters(&self) -> usize {
        match self.op {
            OpKind::BatchNorm => 2 * self.shape[0],
            _ => self.stored_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: SurrogateKind,
    /// Total trainable parameters; checked on load.
    pub declared_parameters: usize,
    /// Model steps advanced by one forward call.
    pub steps_per_call: usize,
    /// Forward calls per forecast window.
    #[serde(default = "one")]
    pub calls_per_window: usize,
    #[serde(default)]
    pub description: String,
    pub layers: Vec<LayerEntry>,
}

fn one() -> usize {
    1
}

impl Manifest {
    pub fn parameters(&self) -> usize {
        self.layers.iter().map(LayerEntry::parameters).sum()
    }

    pub fn layer(&self, name: &str) -> Option<(usize, &LayerEntry)> {
        self.layers.iter().enumerate().find(|(_, l)| l.name == name)
    }
}

/// A manifest with one tensor per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    pub manifest: Manifest,
    pub tensors: Vec<Vec<f32>>,
}

impl WeightContainer {
    /// Builds and validates a container; `declared_parameters` is filled in.
    pub fn new(mut manifest: Manifest, tensors: Vec<Vec<f32>>) -> Result<Self, SurrogateError> {
        for l in &manifest.layers {
            l.check_shape()?;
        }
        manifest.declared_parameters = manifest.parameters();
        let c = Self { manifest, tensors };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.tensors.len() != self.manifest.layers.len() {
            return Err(SurrogateError::Format(format!(
                "{} tensors for {} manifest entries",
                self.tensors.len(),
                self.manifest.layers.len()
            )));
        }
        for (l, t) in self.manifest.layers.iter().zip(&self.tensors) {
            l.check_shape()?;
            if t.len() != l.stored_len() {
                return Err(SurrogateError::ShapeMismatch {
                    layer: l.name.clone(),
                    expected: l.stored_len(),
                    found: t.len(),
                });
            }
        }
        let found = self.manifest.parameters();
        if found != self.manifest.declared_parameters {
            return Err(SurrogateError::CountMismatch {
                expected: self.manifest.declared_parameters,
                found,
            });
        }
        if self.manifest.steps_per_call == 0 || self.manifest.calls_per_window == 0 {
            return Err(SurrogateError::Format("steps_per_call and calls_per_window must be positive".into()));
        }
        Ok(())
    }

    pub fn parameters(&self) -> usize {
        self.manifest.parameters()
    }

    pub fn tensor(&self, name: &str) -> Option<(&LayerEntry, &[f32])> {
        self.manifest.layer(name).map(|(i, l)| (l, self.tensors[i].as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SurrogateError> {
        let manifest = serde_json::to_vec_pretty(&self.manifest).map_err(|e| SurrogateError::Format(e.to_string()))?;
        let payload: usize = self.tensors.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(20 + manifest.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SurrogateError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(SurrogateError::Format("missing weight-container magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(SurrogateError::Format(format!("unsupported container version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err(SurrogateError::Format(format!(
                "manifest claims {len} bytes but only {} remain",
                body.len()
            )));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..len]).map_err(|e| SurrogateError::Format(format!("manifest: {e}")))?;
        for l in &manifest.layers {
            l.check_shape()?;
        }
        let mut payload = &body[len..];
        let mut tensors = Vec::with_capacity(manifest.layers.len());
        for l in &manifest.layers {
            let need = l.stored_len();
            let available = payload.len() / 4;
            if available < need {
                return Err(SurrogateError::ShapeMismatch {
                    layer: l.name.clone(),
                    expected: need,
                    found: available,
                });
            }
            let (head, rest) = payload.split_at(4 * need);
            tensors.push(
                head.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
            payload = rest;
        }
        if !payload.is_empty() {
            return Err(SurrogateError::Format(format!(
                "{} trailing bytes after the last tensor",
                payload.len()
            )));
        }
        let c = Self { manifest, tensors };
        c.validate()?;
        Ok(c)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SurrogateError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SurrogateError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable manifest summary.
    pub fn describe(&self) -> String {
        let m = &self.manifest;
        let mut s = format!(
            "kind: {}\nversion: {FORMAT_VERSION}\nsteps per call: {}\ncalls per window: {}\n",
            serde_json::to_value(m.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            m.steps_per_call,
            m.calls_per_window
        );
        if !m.description.is_empty() {
            s.push_str(&format!("description: {}\n", m.description));
        }
        s.push_str(&format!(
            "{:<16} {:<18} {:<20} {:<9} {:<7} {:>10}\n",
            "layer", "op", "shape", "padding", "act", "params"
        ));
        for l in &m.layers {
            s.push_str(&format!(
                "{:<16} {:<18} {:<20} {:<9} {:<7} {:>10}\n",
                l.name,
                format!("{:?}", l.op),
                format!("{:?}", l.shape),
                format!("{:?}", l.padding),
                format!("{:?}", l.activation),
                l.parameters()
            ));
        }
        s.push_str(&format!("total parameters: {}\n", m.parameters()));
        s
    }
}

/// Reads and validates a container file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightContainer, SurrogateError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SurrogateError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    WeightContainer::from_bytes(&bytes)
}

/// Writes a container file.
pub fn save_weights(c: &WeightContainer, path: impl AsRef<Path>) -> Result<(), SurrogateError> {
    let path = path.as_ref();
    std::fs::write(path, c.to_bytes()?).map_err(|e| SurrogateError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightContainer {
        let manifest = Manifest {
            kind: SurrogateKind::CnnLorenz,
            declared_parameters: 0,
            steps_per_call: 1,
            calls_per_window: 1,
            description: String::new(),
            layers: vec![
                LayerEntry {
                    name: "bn".into(),
                    op: OpKind::BatchNorm,
                    shape: vec![2],
                    padding: PaddingMode::Zero,
                    activation: Activation::Linear,
                    eps: Some(1e-5),
                },
                LayerEntry {
                    name: "conv".into(),
                    op: OpKind::Conv1d,
                    shape: vec![3, 2, 5],
                    padding: PaddingMode::Periodic,
                    activation: Activation::Relu,
                    eps: None,
                },
            ],
        };
        let tensors = vec![
            vec![1.0, 2.0, 0.5, -0.5, 0.0, 0.1, 1.0, 2.0],
            (0..33).map(|i| i as f32 * 0.25).collect(),
        ];
        WeightContainer::new(manifest, tensors).unwrap()
    }

    #[test]
    fn parameter_count_excludes_running_statistics() {
        assert_eq!(sample().parameters(), 4 + 33);
    }

    #[test]
    fn byte_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(WeightContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn truncated_payload_names_the_layer() {
        let bytes = sample().to_bytes().unwrap();
        let err = WeightContainer::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        match err {
            SurrogateError::ShapeMismatch { layer, expected, found } => {
                assert_eq!(layer, "conv");
                assert_eq!((expected, found), (33, 31));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(WeightContainer::from_bytes(&bytes), Err(SurrogateError::Format(_))));
    }

    #[test]
    fn wrong_declared_count_is_reported() {
        let mut c = sample();
        c.manifest.declared_parameters = 89_699;
        let bytes = c.to_bytes().unwrap();
        match WeightContainer::from_bytes(&bytes).unwrap_err() {
            SurrogateError::CountMismatch { expected, found } => assert_eq!((expected, found), (89_699, 37)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn describe_lists_every_layer() {
        let text = sample().describe();
        assert!(text.contains("bn") && text.contains("conv") && text.contains("total parameters: 37"));
    }
}
