//! Residual 2-D U-Net for the QG basin.
//!
//! Level `l` has `base·2^l` channels. Every encoder level except the deepest
//! ends with 2×2 max pooling; every decoder level starts with a 2×2
//! stride-2 transposed convolution and concatenates `[skip, upsampled]`
//! along channels. Convolutions are 3×3 with zero padding; an optional batch
//! norm follows any convolution. Layer names:
//!
//! ```text
//! enc{l}_conv1 [enc{l}_bn1] enc{l}_conv2 [enc{l}_bn2]   l = 0..=depth
//! up{l}                                                  l = depth−1..=0
//! dec{l}_conv1 [dec{l}_bn1] dec{l}_conv2 [dec{l}_bn2]
//! out                                                    1×1, linear
//! ```
//!
//! The `(n−1)²` interior state is embedded in an `n×n` image whose last row
//! and column are zero.

use super::container::{
    Activation, LayerEntry, Manifest, OpKind, PaddingMode, SurrogateKind, WeightContainer,
};
use super::layers::{maxpool2d, BatchNorm, Conv2d, TransposedConv2d};
use super::SurrogateError;

#[derive(Debug, Clone)]
enum Stage {
    Conv(Conv2d),
    Norm(BatchNorm),
}

#[derive(Debug, Clone)]
struct Block {
    stages: Vec<Stage>,
    channels: usize,
}

impl Block {
    fn forward(&self, mut x: Vec<f64>, h: usize, w: usize) -> Vec<f64> {
        for s in &self.stages {
            x = match s {
                Stage::Conv(c) => c.forward(&x, h, w),
                Stage::Norm(bn) => {
                    bn.apply(&mut x, h * w);
                    x
                }
            };
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    encoder: Vec<Block>,
    up: Vec<TransposedConv2d>,
    decoder: Vec<Block>,
    out: Conv2d,
}

fn block(c: &WeightContainer, prefix: &str, c_in: usize) -> Result<Block, SurrogateError> {
    let mut stages = Vec::new();
    let mut channels = c_in;
    for (entry, blob) in c.manifest.layers.iter().zip(&c.tensors) {
        if !entry.name.starts_with(prefix) {
            continue;
        }
        match entry.op {
            OpKind::Conv2d => {
                let conv = Conv2d::from_entry(entry, blob)?;
                if conv.c_in != channels {
                    return Err(SurrogateError::Format(format!(
                        "layer `{}` expects {} input channels, receives {channels}",
                        entry.name, conv.c_in
                    )));
                }
                channels = conv.c_out;
                stages.push(Stage::Conv(conv));
            }
            OpKind::BatchNorm => {
                let bn = BatchNorm::from_entry(entry, blob)?;
                if bn.channels() != channels {
                    return Err(SurrogateError::Format(format!("layer `{}` has the wrong width", entry.name)));
                }
                stages.push(Stage::Norm(bn));
            }
            other => {
                return Err(SurrogateError::Format(format!(
                    "layer `{}` has unexpected op {other:?}",
                    entry.name
                )))
            }
        }
    }
    if !stages.iter().any(|s| matches!(s, Stage::Conv(_))) {
        return Err(SurrogateError::Format(format!("no convolutions under `{prefix}`")));
    }
    Ok(Block { stages, channels })
}

impl UNet {
    pub fn from_container(c: &WeightContainer) -> Result<Self, SurrogateError> {
        if c.manifest.kind != SurrogateKind::UnetQg {
            return Err(SurrogateError::Format("container is not a QG U-Net".into()));
        }
        let mut depth = 0;
        while c.tensor(&format!("up{depth}")).is_some() {
            depth += 1;
        }
        let mut encoder = Vec::with_capacity(depth + 1);
        let mut channels = 1;
        for l in 0..=depth {
            let b = block(c, &format!("enc{l}_"), channels)?;
            if l > 0 && b.channels != 2 * channels {
                return Err(SurrogateError::Format(format!(
                    "encoder level {l} must double the channels ({channels} → {})",
                    b.channels
                )));
            }
            channels = b.channels;
            encoder.push(b);
        }
        let mut up = vec![None; depth];
        let mut decoder = vec![None; depth];
        for l in (0..depth).rev() {
            let (entry, blob) = c.tensor(&format!("up{l}")).expect("counted above");
            let t = TransposedConv2d::from_entry(entry, blob)?;
            let skip = encoder[l].channels;
            if t.c_in != channels || t.c_out != skip || t.kh != 2 || t.kw != 2 {
                return Err(SurrogateError::Format(format!(
                    "layer `up{l}` must map {channels} to {skip} channels with a 2×2 kernel"
                )));
            }
            let b = block(c, &format!("dec{l}_"), 2 * skip)?;
            channels = b.channels;
            up[l] = Some(t);
            decoder[l] = Some(b);
        }
        let (entry, blob) = c
            .tensor("out")
            .ok_or_else(|| SurrogateError::Format("missing layer `out`".into()))?;
        let out = Conv2d::from_entry(entry, blob)?;
        if out.c_in != channels || out.c_out != 1 {
            return Err(SurrogateError::Format("layer `out` must map to one channel".into()));
        }
        Ok(Self {
            encoder,
            up: up.into_iter().map(|t| t.expect("filled")).collect(),
            decoder: decoder.into_iter().map(|b| b.expect("filled")).collect(),
            out,
        })
    }

    pub fn depth(&self) -> usize {
        self.up.len()
    }

    /// Image side used for an interior of `m×m` values.
    pub fn image_side(&self, m: usize) -> Result<usize, SurrogateError> {
        let f = 1 << self.depth();
        [m, m + 1]
            .into_iter()
            .find(|s| s % f == 0)
            .ok_or_else(|| SurrogateError::Format(format!("interior {m} cannot be pooled {} times", self.depth())))
    }

    /// Residual on an `side×side` single-channel image.
    pub fn residual_image(&self, image: &[f64], side: usize) -> Vec<f64> {
        let mut skips = Vec::with_capacity(self.depth());
        let mut x = image.to_vec();
        let mut s = side;
        for (l, b) in self.encoder.iter().enumerate() {
            x = b.forward(x, s, s);
            if l < self.depth() {
                let pooled = maxpool2d(&x, b.channels, s, s);
                skips.push(std::mem::replace(&mut x, pooled));
                s /= 2;
            }
        }
        for l in (0..self.depth()).rev() {
            let upsampled = self.up[l].forward(&x, s, s);
            s *= 2;
            let mut cat = skips.pop().expect("one skip per level");
            cat.extend_from_slice(&upsampled);
            x = self.decoder[l].forward(cat, s, s);
        }
        self.out.forward(&x, s, s)
    }

    /// `U + f_NN(U)` for a row-major `m×m` interior state.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        let m = (u.len() as f64).sqrt().round() as usize;
        if m * m != u.len() {
            return Err(SurrogateError::DimensionMismatch {
                expected: m * m,
                found: u.len(),
            });
        }
        let side = self.image_side(m)?;
        let mut image = vec![0.0; side * side];
        for r in 0..m {
            image[r * side..r * side + m].copy_from_slice(&u[r * m..(r + 1) * m]);
        }
        let res = self.residual_image(&image, side);
        let mut out = u.to_vec();
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] += res[r * side + c];
            }
        }
        Ok(out)
    }
}

fn conv2d(name: String, c_out: usize, c_in: usize, k: usize, activation: Activation) -> LayerEntry {
    LayerEntry {
        name,
        op: OpKind::Conv2d,
        shape: vec![c_out, c_in, k, k],
        padding: PaddingMode::Zero,
        activation,
        eps: None,
    }
}

/// Layer list for `depth` poolings, `base` channels at the top level and
/// optional batch norm after every 3×3 convolution.
pub fn unet_manifest(base: usize, depth: usize, batch_norm: bool) -> Manifest {
    let act = if batch_norm { Activation::Linear } else { Activation::Relu };
    let mut layers = Vec::new();
    let push_block = |layers: &mut Vec<LayerEntry>, prefix: &str, c_in: usize, c: usize| {
        for (i, ci) in [(1, c_in), (2, c)] {
            layers.push(conv2d(format!("{prefix}_conv{i}"), c, ci, 3, act));
            if batch_norm {
                layers.push(LayerEntry {
                    name: format!("{prefix}_bn{i}"),
                    op: OpKind::BatchNorm,
                    shape: vec![c],
                    padding: PaddingMode::Zero,
                    activation: Activation::Relu,
                    eps: Some(1e-5),
                });
            }
        }
    };
    let mut c_in = 1;
    for l in 0..=depth {
        let c = base << l;
        push_block(&mut layers, &format!("enc{l}"), c_in, c);
        c_in = c;
    }
    for l in (0..depth).rev() {
        let c = base << l;
        layers.push(LayerEntry {
            name: format!("up{l}"),
            op: OpKind::TransposedConv2d,
            shape: vec![c_in, c, 2, 2],
            padding: PaddingMode::Zero,
            activation: Activation::Linear,
            eps: None,
        });
        push_block(&mut layers, &format!("dec{l}"), 2 * c, c);
        c_in = c;
    }
    layers.push(conv2d("out".into(), 1, base, 1, Activation::Linear));
    Manifest {
        kind: SurrogateKind::UnetQg,
        declared_parameters: 0,
        steps_per_call: crate::qg::STEPS_PER_WINDOW,
        calls_per_window: 1,
        description: String::new(),
        layers,
    }
}

/// A U-Net whose weights come from `fill` (batch norms are identities).
pub fn unet_with(base: usize, depth: usize, batch_norm: bool, mut fill: impl FnMut() -> f32) -> WeightContainer {
    let manifest = unet_manifest(base, depth, batch_norm);
    let tensors = manifest
        .layers
        .iter()
        .map(|l| match l.op {
            OpKind::BatchNorm => {
                let c = l.shape[0];
                let mut t = vec![1.0; c];
                t.extend(std::iter::repeat_n(0.0, 2 * c));
                t.extend(std::iter::repeat_n(1.0, c));
                t
            }
            _ => (0..l.stored_len()).map(|_| fill()).collect(),
        })
        .collect();
    WeightContainer::new(manifest, tensors).expect("consistent U-Net container")
}
