//! Inference kernels. Activations are channel-major: `[c][n]` in 1-D and
//! `[c][h][w]` in 2-D. Weights arrive as f32 and are widened to f64.

use super::container::{Activation, LayerEntry, OpKind, PaddingMode};
use super::SurrogateError;

fn split(entry: &LayerEntry, blob: &[f32], op: OpKind) -> Result<(Vec<f64>, Vec<f64>), SurrogateError> {
    if entry.op != op {
        return Err(SurrogateError::Format(format!(
            "layer `{}` is {:?}, expected {:?}",
            entry.name, entry.op, op
        )));
    }
    if blob.len() != entry.stored_len() {
        return Err(SurrogateError::ShapeMismatch {
            layer: entry.name.clone(),
            expected: entry.stored_len(),
            found: blob.len(),
        });
    }
    let n: usize = entry.shape.iter().product();
    Ok((
        blob[..n].iter().map(|v| *v as f64).collect(),
        blob[n..].iter().map(|v| *v as f64).collect(),
    ))
}

const MIN_RUN: usize = 4;

/// Non-zero taps of one kernel row: isolated `(t, w)` pairs and runs of
/// `len` equal weights starting at `t`, the latter evaluated from prefix sums.
#[derive(Debug, Clone, Default)]
struct Taps {
    single: Vec<(usize, f64)>,
    runs: Vec<(usize, usize, f64)>,
}

impl Taps {
    fn new(kernel: &[f64]) -> Self {
        let mut taps = Taps::default();
        let mut t = 0;
        while t < kernel.len() {
            let w = kernel[t];
            let mut end = t + 1;
            while end < kernel.len() && kernel[end] == w {
                end += 1;
            }
            if w != 0.0 {
                if end - t >= MIN_RUN {
                    taps.runs.push((t, end - t, w));
                } else {
                    taps.single.extend((t..end).map(|i| (i, w)));
                }
            }
            t = end;
        }
        taps
    }
}

/// A 1-D convolution (cross-correlation, centred kernel) with its non-zero
/// taps precomputed.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub c_out: usize,
    pub c_in: usize,
    pub width: usize,
    taps: Vec<Taps>,
    bias: Vec<f64>,
    padding: PaddingMode,
    activation: Activation,
}

impl Conv1d {
    pub fn new(
        kernel: &[f64],
        bias: &[f64],
        (c_out, c_in, width): (usize, usize, usize),
        padding: PaddingMode,
        activation: Activation,
    ) -> Result<Self, SurrogateError> {
        if width % 2 == 0 {
            return Err(SurrogateError::Format(format!("kernel width {width} must be odd")));
        }
        if kernel.len() != c_out * c_in * width || bias.len() != c_out {
            return Err(SurrogateError::Format("conv1d kernel or bias has the wrong length".into()));
        }
        let taps = kernel.chunks_exact(width).map(Taps::new).collect();
        Ok(Self {
            c_out,
            c_in,
            width,
            taps,
            bias: bias.to_vec(),
            padding,
            activation,
        })
    }

    pub fn from_entry(entry: &LayerEntry, blob: &[f32]) -> Result<Self, SurrogateError> {
        let (w, b) = split(entry, blob, OpKind::Conv1d)?;
        let s = &entry.shape;
        Self::new(&w, &b, (s[0], s[1], s[2]), entry.padding, entry.activation)
    }

    /// Pads the input and builds the prefix sums needed by runs of taps.
    pub fn prepare(&self, x: &[f64], n: usize) -> PaddedInput {
        assert_eq!(x.len(), self.c_in * n, "conv1d input has the wrong length");
        let half = self.width / 2;
        let padded_len = n + self.width - 1;
        let mut padded = vec![0.0; self.c_in * padded_len];
        for c in 0..self.c_in {
            let src = &x[c * n..(c + 1) * n];
            let dst = &mut padded[c * padded_len..(c + 1) * padded_len];
            dst[half..half + n].copy_from_slice(src);
            match self.padding {
                PaddingMode::Periodic if half <= n => {
                    dst[..half].copy_from_slice(&src[n - half..]);
                    dst[half + n..].copy_from_slice(&src[..half]);
                }
                PaddingMode::Periodic => {
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = src[(t as isize - half as isize).rem_euclid(n as isize) as usize];
                    }
                }
                PaddingMode::Zero => {}
            }
        }
        let needs_prefix = self.taps.iter().any(|t| !t.runs.is_empty());
        let mut prefix = Vec::new();
        if needs_prefix {
            prefix = vec![0.0; self.c_in * (padded_len + 1)];
            for c in 0..self.c_in {
                let p = &mut prefix[c * (padded_len + 1)..(c + 1) * (padded_len + 1)];
                for t in 0..padded_len {
                    p[t + 1] = p[t] + padded[c * padded_len + t];
                }
            }
        }
        PaddedInput {
            n,
            padded_len,
            padded,
            prefix,
        }
    }

    /// Output channel `o` written into `row` (length `n`).
    pub fn channel_into(&self, o: usize, input: &PaddedInput, row: &mut [f64]) {
        let (n, padded_len) = (input.n, input.padded_len);
        row.iter_mut().for_each(|v| *v = self.bias[o]);
        for c in 0..self.c_in {
            let src = &input.padded[c * padded_len..(c + 1) * padded_len];
            let taps = &self.taps[o * self.c_in + c];
            for &(t, w) in &taps.single {
                for (r, s) in row.iter_mut().zip(&src[t..t + n]) {
                    *r += w * s;
                }
            }
            if taps.runs.is_empty() {
                continue;
            }
            let p = &input.prefix[c * (padded_len + 1)..(c + 1) * (padded_len + 1)];
            for &(t, len, w) in &taps.runs {
                for (r, (hi, lo)) in row.iter_mut().zip(p[t + len..].iter().zip(&p[t..t + n])) {
                    *r += w * (hi - lo);
                }
            }
        }
        row.iter_mut().for_each(|v| *v = self.activation.apply(*v));
    }

    /// Weight from input `c` to output `o` of a width-1 kernel.
    pub fn pointwise_weight(&self, o: usize, c: usize) -> f64 {
        assert_eq!(self.width, 1, "pointwise weights need a width-1 kernel");
        self.taps[o * self.c_in + c]
            .single
            .iter()
            .map(|(_, w)| w)
            .chain(self.taps[o * self.c_in + c].runs.iter().map(|(_, _, w)| w))
            .sum()
    }

    pub fn bias(&self, o: usize) -> f64 {
        self.bias[o]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `out[o][i] = act(b_o + Σ_c Σ_t w[o][c][t]·x[c][i + t − width/2])`.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let input = self.prepare(x, n);
        let mut out = vec![0.0; self.c_out * n];
        for (o, row) in out.chunks_exact_mut(n).enumerate() {
            self.channel_into(o, &input, row);
        }
        out
    }
}

/// A convolution input after padding.
#[derive(Debug, Clone)]
pub struct PaddedInput {
    n: usize,
    padded_len: usize,
    padded: Vec<f64>,
    prefix: Vec<f64>,
}

/// Circular 1-D convolution of a `[c_in][n]` signal with a dense
/// `[c_out][c_in][width]` kernel.
pub fn conv1d_periodic(
    x: &[f64],
    n: usize,
    kernel: &[f64],
    bias: &[f64],
    (c_out, c_in, width): (usize, usize, usize),
    activation: Activation,
) -> Result<Vec<f64>, SurrogateError> {
    Ok(Conv1d::new(kernel, bias, (c_out, c_in, width), PaddingMode::Periodic, activation)?.forward(x, n))
}

/// Inference-mode batch normalisation over channels.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    scale: Vec<f64>,
    shift: Vec<f64>,
    activation: Activation,
}

impl BatchNorm {
    pub fn new(gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Self {
        let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
        let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        Self {
            scale,
            shift,
            activation: Activation::Linear,
        }
    }

    pub fn from_entry(entry: &LayerEntry, blob: &[f32]) -> Result<Self, SurrogateError> {
        split(entry, blob, OpKind::BatchNorm)?;
        let c = entry.shape[0];
        let all: Vec<f64> = blob.iter().map(|v| *v as f64).collect();
        let mut bn = Self::new(
            &all[..c],
            &all[c..2 * c],
            &all[2 * c..3 * c],
            &all[3 * c..],
            entry.eps.unwrap_or(1e-5),
        );
        bn.activation = entry.activation;
        Ok(bn)
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Normalises then activates in place; `len` values per channel.
    pub fn apply(&self, x: &mut [f64], len: usize) {
        for (c, chunk) in x.chunks_exact_mut(len).enumerate() {
            let (s, b) = (self.scale[c], self.shift[c]);
            chunk.iter_mut().for_each(|v| *v = self.activation.apply(*v * s + b));
        }
    }
}

/// Same-size 2-D convolution with zero padding and an odd kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Conv2d {
    pub fn from_entry(entry: &LayerEntry, blob: &[f32]) -> Result<Self, SurrogateError> {
        let (weights, bias) = split(entry, blob, OpKind::Conv2d)?;
        let s = &entry.shape;
        if s[2] % 2 == 0 || s[3] % 2 == 0 {
            return Err(SurrogateError::Format(format!("layer `{}` needs an odd kernel", entry.name)));
        }
        Ok(Self {
            c_out: s[0],
            c_in: s[1],
            kh: s[2],
            kw: s[3],
            weights,
            bias,
            activation: entry.activation,
        })
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.c_in * h * w, "conv2d input has the wrong length");
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let mut out = vec![0.0; self.c_out * h * w];
        for o in 0..self.c_out {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..self.c_in {
                let src = &x[c * h * w..(c + 1) * h * w];
                for dy in 0..self.kh {
                    for dx in 0..self.kw {
                        let wt = self.weights[((o * self.c_in + c) * self.kh + dy) * self.kw + dx];
                        if wt == 0.0 {
                            continue;
                        }
                        let (oy, ox) = (dy as isize - ph, dx as isize - pw);
                        for y in 0..h {
                            let sy = y as isize + oy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + ox;
                                if sx >= 0 && sx < w as isize {
                                    plane[y * w + xx] += wt * src[sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                }
            }
            plane.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        out
    }
}

/// Transposed convolution with stride equal to the kernel size.
#[derive(Debug, Clone)]
pub struct TransposedConv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl TransposedConv2d {
    pub fn from_entry(entry: &LayerEntry, blob: &[f32]) -> Result<Self, SurrogateError> {
        let (weights, bias) = split(entry, blob, OpKind::TransposedConv2d)?;
        let s = &entry.shape;
        Ok(Self {
            c_in: s[0],
            c_out: s[1],
            kh: s[2],
            kw: s[3],
            weights,
            bias,
            activation: entry.activation,
        })
    }

    /// Maps `[c_in][h][w]` to `[c_out][h·kh][w·kw]`.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.c_in * h * w, "transposed conv input has the wrong length");
        let (oh, ow) = (h * self.kh, w * self.kw);
        let mut out = vec![0.0; self.c_out * oh * ow];
        for o in 0..self.c_out {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..self.c_in {
                let src = &x[c * h * w..(c + 1) * h * w];
                for dy in 0..self.kh {
                    for dx in 0..self.kw {
                        let wt = self.weights[((c * self.c_out + o) * self.kh + dy) * self.kw + dx];
                        if wt == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            for xx in 0..w {
                                plane[(y * self.kh + dy) * ow + xx * self.kw + dx] += wt * src[y * w + xx];
                            }
                        }
                    }
                }
            }
            plane.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        out
    }
}

/// 2×2 max pooling with stride 2; `h` and `w` must be even.
pub fn maxpool2d(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx];
                let b = src[2 * y * w + 2 * xx + 1];
                let cc = src[(2 * y + 1) * w + 2 * xx];
                let d = src[(2 * y + 1) * w + 2 * xx + 1];
                out[ch * oh * ow + y * ow + xx] = a.max(b).max(cc).max(d);
            }
        }
    }
    out
}

/// Dense layer `y = act(Wx + b)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub out: usize,
    pub inp: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Linear {
    pub fn from_entry(entry: &LayerEntry, blob: &[f32]) -> Result<Self, SurrogateError> {
        let (weights, bias) = split(entry, blob, OpKind::Linear)?;
        Ok(Self {
            out: entry.shape[0],
            inp: entry.shape[1],
            weights,
            bias,
            activation: entry.activation,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.weights[o * self.inp..(o + 1) * self.inp];
                self.activation
                    .apply(self.bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_kernel_leaves_signal_unchanged() {
        let x = random(12, 1);
        let y = conv1d_periodic(&x, 12, &[1.0], &[0.0], (1, 1, 1), Activation::Linear).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_kernel_gives_the_bias() {
        let x = random(12, 2);
        let y = conv1d_periodic(&x, 12, &[0.0; 5], &[0.7], (1, 1, 5), Activation::Linear).unwrap();
        assert!(y.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn matches_naive_circular_loop() {
        let n = 12;
        let (c_out, c_in, k) = (3, 2, 5);
        let x = random(c_in * n, 3);
        let w = random(c_out * c_in * k, 4);
        let b = random(c_out, 5);
        let y = conv1d_periodic(&x, n, &w, &b, (c_out, c_in, k), Activation::Relu).unwrap();
        for o in 0..c_out {
            for i in 0..n {
                let mut acc = b[o];
                for c in 0..c_in {
                    for t in 0..k {
                        let src = (i + n + t - k / 2) % n;
                        acc += w[(o * c_in + c) * k + t] * x[c * n + src];
                    }
                }
                assert!((y[o * n + i] - acc.max(0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batch_norm_uses_running_statistics() {
        let bn = BatchNorm::new(&[2.0], &[1.0], &[3.0], &[4.0], 0.0);
        let mut x = vec![5.0, 3.0];
        bn.apply(&mut x, 2);
        assert_eq!(x, vec![3.0, 1.0]);
        let mut again = vec![5.0, 3.0];
        bn.apply(&mut again, 2);
        assert_eq!(x, again);
    }

    #[test]
    fn maxpool_halves_dimensions() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        assert_eq!(maxpool2d(&x, 1, 4, 4), vec![5.0, 7.0, 13.0, 15.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn circular_convolution_is_translation_equivariant(seed in 0u64..10_000, shift in 0usize..20) {
            let n = 20;
            let (c_out, c_in, k) = (2, 3, 7);
            let x = random(c_in * n, seed);
            let w = random(c_out * c_in * k, seed + 1);
            let b = random(c_out, seed + 2);
            let rotate = |v: &[f64], ch: usize| -> Vec<f64> {
                (0..ch).flat_map(|c| (0..n).map(move |i| (c, i)))
                    .map(|(c, i)| v[c * n + (i + n - shift) % n])
                    .collect()
            };
            let y = conv1d_periodic(&x, n, &w, &b, (c_out, c_in, k), Activation::Relu).unwrap();
            let y_rot = conv1d_periodic(&rotate(&x, c_in), n, &w, &b, (c_out, c_in, k), Activation::Relu).unwrap();
            let expected = rotate(&y, c_out);
            for (a, e) in y_rot.iter().zip(&expected) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
