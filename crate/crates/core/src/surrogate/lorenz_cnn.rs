//! Residual 1-D CNN for the Lorenz-2005 ring:
//!
//! ```text
//! z = BN(U)
//! h = relu(conv_5k(z)) ⊙ relu(conv_3k_a(z)) + relu(conv_4k(z)) ⊙ relu(conv_3k_b(z))
//! U_next = U + out(relu(mix(h)))
//! ```
//!
//! All convolutions pad periodically. `mix` and `out` have width 1.

use super::container::{
    Activation, LayerEntry, Manifest, OpKind, PaddingMode, SurrogateKind, WeightContainer,
};
use super::layers::{BatchNorm, Conv1d};
use super::SurrogateError;
use crate::lorenz::{primed_weights, LorenzParams};

#[derive(Debug, Clone)]
pub struct LorenzCnn {
    bn: BatchNorm,
    conv_5k: Conv1d,
    conv_3k_a: Conv1d,
    conv_4k: Conv1d,
    conv_3k_b: Conv1d,
    mix: Conv1d,
    out: Conv1d,
}

fn conv(c: &WeightContainer, name: &str) -> Result<Conv1d, SurrogateError> {
    let (entry, blob) = c.tensor(name).ok_or_else(|| SurrogateError::Format(format!("missing layer `{name}`")))?;
    Conv1d::from_entry(entry, blob)
}

impl LorenzCnn {
    pub fn from_container(c: &WeightContainer) -> Result<Self, SurrogateError> {
        if c.manifest.kind != SurrogateKind::CnnLorenz {
            return Err(SurrogateError::Format("container is not a Lorenz CNN".into()));
        }
        let (bn_entry, bn_blob) = c
            .tensor("bn_in")
            .ok_or_else(|| SurrogateError::Format("missing layer `bn_in`".into()))?;
        let net = Self {
            bn: BatchNorm::from_entry(bn_entry, bn_blob)?,
            conv_5k: conv(c, "conv_5k")?,
            conv_3k_a: conv(c, "conv_3k_a")?,
            conv_4k: conv(c, "conv_4k")?,
            conv_3k_b: conv(c, "conv_3k_b")?,
            mix: conv(c, "mix")?,
            out: conv(c, "out")?,
        };
        let branches = [&net.conv_5k, &net.conv_3k_a, &net.conv_4k, &net.conv_3k_b];
        let channels = net.conv_5k.c_out;
        let wiring_ok = net.bn.channels() == 1
            && net.mix.width == 1
            && branches.iter().all(|b| b.c_in == 1 && b.c_out == channels)
            && net.mix.c_in == channels
            && net.out.c_in == net.mix.c_out
            && net.out.c_out == 1;
        if !wiring_ok {
            return Err(SurrogateError::Format("Lorenz CNN layers do not chain".into()));
        }
        Ok(net)
    }

    /// Channels of the product stage.
    pub fn channels(&self) -> usize {
        self.conv_5k.c_out
    }

    /// The residual `f_NN(U)`, streamed one product channel at a time.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut z = u.to_vec();
        self.bn.apply(&mut z, n);
        let inputs = [
            self.conv_5k.prepare(&z, n),
            self.conv_3k_a.prepare(&z, n),
            self.conv_4k.prepare(&z, n),
            self.conv_3k_b.prepare(&z, n),
        ];
        let branches = [&self.conv_5k, &self.conv_3k_a, &self.conv_4k, &self.conv_3k_b];
        let mut rows = vec![vec![0.0; n]; 4];
        let mixed = self.mix.c_out;
        let mut m: Vec<f64> = (0..mixed).flat_map(|o| std::iter::repeat_n(self.mix.bias(o), n)).collect();
        for ch in 0..self.channels() {
            for ((conv, input), row) in branches.iter().zip(&inputs).zip(rows.iter_mut()) {
                conv.channel_into(ch, input, row);
            }
            for (o, acc) in m.chunks_exact_mut(n).enumerate() {
                let w = self.mix.pointwise_weight(o, ch);
                if w == 0.0 {
                    continue;
                }
                for i in 0..n {
                    acc[i] += w * (rows[0][i] * rows[1][i] + rows[2][i] * rows[3][i]);
                }
            }
        }
        let act = self.mix.activation();
        m.iter_mut().for_each(|v| *v = act.apply(*v));
        self.out.forward(&m, n)
    }

    /// `U + f_NN(U)`.
    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let r = self.residual(u);
        u.iter().zip(&r).map(|(a, b)| a + b).collect()
    }
}

fn conv_entry(name: &str, shape: [usize; 3], activation: Activation) -> LayerEntry {
    LayerEntry {
        name: name.into(),
        op: OpKind::Conv1d,
        shape: shape.to_vec(),
        padding: PaddingMode::Periodic,
        activation,
        eps: None,
    }
}

/// Kernel widths `(5k, 3k, 4k)` for smoothing length `k`.
pub fn kernel_widths(k: usize) -> (usize, usize, usize) {
    let j = primed_weights(k).len() / 2;
    (2 * (2 * k + j) + 1, 2 * (k + j) + 1, 4 * k + 1)
}

/// Layer list of the topology with `channels` product channels and
/// `mix_channels` mixing channels.
pub fn lorenz_manifest(k: usize, channels: usize, mix_channels: usize, calls_per_window: usize) -> Manifest {
    let (w5, w3, w4) = kernel_widths(k);
    Manifest {
        kind: SurrogateKind::CnnLorenz,
        declared_parameters: 0,
        steps_per_call: 1,
        calls_per_window,
        description: String::new(),
        layers: vec![
            LayerEntry {
                name: "bn_in".into(),
                op: OpKind::BatchNorm,
                shape: vec![1],
                padding: PaddingMode::Periodic,
                activation: Activation::Linear,
                eps: Some(0.0),
            },
            conv_entry("conv_5k", [channels, 1, w5], Activation::Relu),
            conv_entry("conv_3k_a", [channels, 1, w3], Activation::Relu),
            conv_entry("conv_4k", [channels, 1, w4], Activation::Relu),
            conv_entry("conv_3k_b", [channels, 1, w3], Activation::Relu),
            conv_entry("mix", [mix_channels, channels, 1], Activation::Relu),
            conv_entry("out", [1, mix_channels, 1], Activation::Linear),
        ],
    }
}

/// All-zero weights (with identity batch norm): the network is the identity map.
pub fn zero_lorenz_cnn(k: usize, channels: usize, mix_channels: usize) -> WeightContainer {
    let manifest = lorenz_manifest(k, channels, mix_channels, 1);
    let tensors = manifest
        .layers
        .iter()
        .map(|l| match l.op {
            OpKind::BatchNorm => vec![1.0, 0.0, 0.0, 1.0],
            _ => vec![0.0; l.stored_len()],
        })
        .collect();
    WeightContainer::new(manifest, tensors).expect("consistent zero container")
}

const SIGNAL_SHIFT: f64 = 64.0;
const LINEAR_SHIFT: f64 = 65_536.0;
const OUTPUT_SHIFT: f64 = 8_192.0;

/// Hand-derived weights under which one forward call is an explicit Euler
/// step of length `dt_call` of the Lorenz-2005 tendency, valid while
/// `|X| < 64`.
///
/// Product channel `a ∈ −J..J` forms `(W_{i−K+a} + s)(X_{i+K+a} + s)`, one
/// further channel forms `(W_{i−2K} + s)(W_{i−K} + s)`, and a last channel
/// carries every linear term (including the `s`-cross terms) plus a large
/// offset that keeps it positive through the ReLU. `mix` splits the signed
/// tendency into two positive channels which `out` recombines.
pub fn reference_lorenz_cnn(p: &LorenzParams, dt_call: f64, calls_per_window: usize) -> WeightContainer {
    let k = p.k;
    let kf = k as f64;
    let w8 = primed_weights(k);
    let j = w8.len() / 2;
    let (w5, w3, _) = kernel_widths(k);
    let (h5, h3) = ((w5 / 2) as isize, (w3 / 2) as isize);
    let products = w8.len();
    let ww = products;
    let lin = products + 1;
    let channels = products + 2;
    let s = SIGNAL_SHIFT;

    let mut manifest = lorenz_manifest(k, channels, 2, calls_per_window);
    manifest.description = format!(
        "analytic reference: explicit Euler step dt={dt_call} of Lorenz-2005 (K={k}, F={})",
        p.forcing
    );

    let mut k5 = vec![0.0f64; channels * w5];
    let mut k3 = vec![0.0f64; channels * w3];
    let mut b5 = vec![s; channels];
    let mut b3 = vec![s; channels];
    // Taps of W_{i+o} into a kernel row with half-width `half`.
    let add_box = |row: &mut [f64], half: isize, o: isize, scale: f64| {
        for (idx, wk) in w8.iter().enumerate() {
            let d = idx as isize - j as isize;
            row[(o - d + half) as usize] += scale * wk / kf;
        }
    };
    let mut mix_w = vec![0.0f64; channels];
    let mut linear = vec![0.0f64; w5];
    linear[h5 as usize] -= 1.0;
    for a in -(j as isize)..=j as isize {
        let c = (a + j as isize) as usize;
        let m = w8[c] / kf;
        add_box(&mut k5[c * w5..(c + 1) * w5], h5, a - k as isize, 1.0);
        k3[c * w3 + (k as isize + a + h3) as usize] = 1.0;
        mix_w[c] = m;
        add_box(&mut linear, h5, a - k as isize, -s * m);
        linear[(k as isize + a + h5) as usize] -= s * m;
    }
    add_box(&mut k5[ww * w5..(ww + 1) * w5], h5, -2 * k as isize, 1.0);
    add_box(&mut k3[ww * w3..(ww + 1) * w3], h3, -(k as isize), 1.0);
    mix_w[ww] = -1.0;
    add_box(&mut linear, h5, -2 * k as isize, s);
    add_box(&mut linear, h5, -(k as isize), s);
    k5[lin * w5..(lin + 1) * w5].copy_from_slice(&linear);
    b5[lin] = LINEAR_SHIFT;
    b3[lin] = 1.0;
    mix_w[lin] = 1.0;
    let quadratic: f64 = mix_w[..=ww].iter().sum();
    let bias = p.forcing - LINEAR_SHIFT - s * s * quadratic;

    let f32s = |v: &[f64]| v.iter().map(|x| *x as f32).collect::<Vec<f32>>();
    let with_bias = |w: &[f64], b: &[f64]| {
        let mut t = f32s(w);
        t.extend(f32s(b));
        t
    };
    let (_, _, w4) = kernel_widths(k);
    let mut mix = Vec::with_capacity(2 * channels + 2);
    mix.extend(mix_w.iter().map(|m| m / 2.0));
    mix.extend(mix_w.iter().map(|m| -m / 2.0));
    let tensors = vec![
        vec![1.0, 0.0, 0.0, 1.0],
        with_bias(&k5, &b5),
        with_bias(&k3, &b3),
        vec![0.0; channels * w4 + channels],
        vec![0.0; channels * w3 + channels],
        with_bias(&mix, &[bias / 2.0 + OUTPUT_SHIFT, -bias / 2.0 + OUTPUT_SHIFT]),
        with_bias(&[dt_call, -dt_call], &[0.0]),
    ];
    WeightContainer::new(manifest, tensors).expect("consistent reference container")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::StateVector;
    use crate::lorenz::tendency;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-8.0..14.0)).collect()
    }

    #[test]
    fn zero_weights_give_identity() {
        let net = LorenzCnn::from_container(&zero_lorenz_cnn(4, 3, 2)).unwrap();
        let u = random_state(40, 1);
        assert_eq!(net.forward(&u), u);
    }

    #[test]
    fn reference_weights_reproduce_an_euler_step() {
        for (n, k) in [(960, 32), (60, 4), (40, 1)] {
            let p = LorenzParams { n, k, forcing: 15.0, dt: 0.025 };
            let c = reference_lorenz_cnn(&p, 0.01, 1);
            let net = LorenzCnn::from_container(&c).unwrap();
            let u = random_state(n, 7);
            let t = tendency(&StateVector::new(u.clone()).unwrap(), &p).into_vec();
            let dt = 0.01f32 as f64;
            let got = net.forward(&u);
            for i in 0..n {
                assert!((got[i] - (u[i] + dt * t[i])).abs() < 1e-9, "n={n} k={k} i={i}");
            }
        }
    }

    #[test]
    fn rotation_commutes_with_the_network() {
        let p = LorenzParams::default();
        let net = LorenzCnn::from_container(&reference_lorenz_cnn(&p, 0.025, 1)).unwrap();
        let u = random_state(p.n, 3);
        let shift = 17;
        let rotated: Vec<f64> = (0..p.n).map(|i| u[(i + p.n - shift) % p.n]).collect();
        let a = net.forward(&u);
        let b = net.forward(&rotated);
        for i in 0..p.n {
            assert!((b[i] - a[(i + p.n - shift) % p.n]).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = LorenzParams::default();
        let net = LorenzCnn::from_container(&reference_lorenz_cnn(&p, 0.025, 1)).unwrap();
        let u = random_state(p.n, 4);
        assert_eq!(net.forward(&u), net.forward(&u));
    }

    #[test]
    fn reference_topology_has_thirty_five_channels_for_k32() {
        let c = reference_lorenz_cnn(&LorenzParams::default(), 0.025, 2);
        assert_eq!(LorenzCnn::from_container(&c).unwrap().channels(), 35);
        assert_eq!(kernel_widths(32), (161, 97, 129));
        assert_eq!(c.parameters(), 35 * (161 + 97 + 129 + 97 + 4) + 2 * 35 + 2 + 3 + 2);
    }
}
