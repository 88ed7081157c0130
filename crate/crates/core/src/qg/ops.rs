//! Finite-difference operators on a square node grid.
//!
//! Fields hold `(nx+1)²` node values in row-major order, `y` (row `j`) slow
//! and `x` (column `i`) fast. Every operator writes interior nodes only and
//! leaves the boundary ring at zero.

/// A square node grid with `cells + 1` nodes per side and spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub cells: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(cells: usize, h: f64) -> Self {
        Self { cells, h }
    }

    /// The unit square.
    pub fn unit(cells: usize) -> Self {
        Self::new(cells, 1.0 / cells as f64)
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn len(&self) -> usize {
        self.nodes() * self.nodes()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Interior nodes per side.
    pub fn interior(&self) -> usize {
        self.cells - 1
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nodes() + i
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }

    /// Evaluates `f(x, y)` at interior nodes; the boundary stays zero.
    pub fn sample(&self, mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
        let mut out = self.zeros();
        for j in 1..self.cells {
            for i in 1..self.cells {
                out[self.idx(i, j)] = f(i as f64 * self.h, j as f64 * self.h);
            }
        }
        out
    }

    /// Interior values, row-major.
    pub fn interior_values(&self, full: &[f64]) -> Vec<f64> {
        let m = self.interior();
        let mut out = Vec::with_capacity(m * m);
        for j in 1..self.cells {
            out.extend_from_slice(&full[self.idx(1, j)..self.idx(1, j) + m]);
        }
        out
    }

    /// Embeds interior values into a full field with a zero boundary.
    pub fn from_interior(&self, interior: &[f64]) -> Vec<f64> {
        let m = self.interior();
        let mut out = self.zeros();
        for j in 1..self.cells {
            let row = (j - 1) * m;
            let start = self.idx(1, j);
            out[start..start + m].copy_from_slice(&interior[row..row + m]);
        }
        out
    }
}

/// Five-point Laplacian.
pub fn laplacian(g: &Grid, f: &[f64], out: &mut [f64]) {
    let n = g.nodes();
    let inv = 1.0 / (g.h * g.h);
    for j in 1..g.cells {
        let r = j * n;
        for i in 1..g.cells {
            let k = r + i;
            out[k] = (f[k + 1] + f[k - 1] + f[k + n] + f[k - n] - 4.0 * f[k]) * inv;
        }
    }
}

/// Centred `∂f/∂x`.
pub fn ddx(g: &Grid, f: &[f64], out: &mut [f64]) {
    let n = g.nodes();
    let inv = 0.5 / g.h;
    for j in 1..g.cells {
        let r = j * n;
        for i in 1..g.cells {
            let k = r + i;
            out[k] = (f[k + 1] - f[k - 1]) * inv;
        }
    }
}

/// Arakawa's nine-point Jacobian `J(a,b) ≈ a_x b_y − a_y b_x`, the average
/// of the `J⁺⁺`, `J⁺ˣ` and `Jˣ⁺` stencils.
pub fn arakawa_jacobian(g: &Grid, a: &[f64], b: &[f64], out: &mut [f64]) {
    let n = g.nodes();
    let inv = 1.0 / (12.0 * g.h * g.h);
    for j in 1..g.cells {
        let r = j * n;
        for i in 1..g.cells {
            let k = r + i;
            let (e, w, nn, s) = (k + 1, k - 1, k + n, k - n);
            let (ne, nw, se, sw) = (k + n + 1, k + n - 1, k - n + 1, k - n - 1);
            let jpp = (a[e] - a[w]) * (b[nn] - b[s]) - (a[nn] - a[s]) * (b[e] - b[w]);
            let mixed = (a[e] * (b[ne] - b[se]) - b[e] * (a[ne] - a[se]))
                + (b[w] * (a[nw] - a[sw]) - a[w] * (b[nw] - b[sw]))
                + (b[nn] * (a[ne] - a[nw]) - a[nn] * (b[ne] - b[nw]))
                + (a[s] * (b[se] - b[sw]) - b[s] * (a[se] - a[sw]));
            out[k] = (jpp + mixed) * inv;
        }
    }
}

/// Allocating wrapper of [`arakawa_jacobian`].
pub fn jacobian(g: &Grid, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = g.zeros();
    arakawa_jacobian(g, a, b, &mut out);
    out
}

/// Allocating wrapper of [`laplacian`].
pub fn laplace(g: &Grid, f: &[f64]) -> Vec<f64> {
    let mut out = g.zeros();
    laplacian(g, f, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(g: &Grid, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.sample(|_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn jacobian_of_field_with_itself_vanishes() {
        let g = Grid::unit(32);
        let a = random_field(&g, 1);
        assert!(jacobian(&g, &a, &a).iter().all(|v| v.abs() < 1e-13 * 32.0 * 32.0));
    }

    #[test]
    fn jacobian_with_constant_vanishes() {
        let g = Grid::unit(32);
        let a = random_field(&g, 2);
        let c = vec![3.0; g.len()];
        assert!(jacobian(&g, &a, &c).iter().all(|v| v.abs() < 1e-10));
    }

    fn manufactured_error(cells: usize) -> f64 {
        let g = Grid::unit(cells);
        let full = |f: &dyn Fn(f64, f64) -> f64| {
            let mut out = g.zeros();
            for j in 0..=cells {
                for i in 0..=cells {
                    out[g.idx(i, j)] = f(i as f64 * g.h, j as f64 * g.h);
                }
            }
            out
        };
        let a = full(&|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let b = full(&|x, _| (2.0 * PI * x).cos());
        let num = jacobian(&g, &a, &b);
        // a_x b_y − a_y b_x with b_y = 0.
        let exact = g.sample(|x, y| {
            let a_y = 2.0 * PI * (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
            let b_x = -2.0 * PI * (2.0 * PI * x).sin();
            -a_y * b_x
        });
        num.iter().zip(&exact).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn jacobian_converges_at_second_order() {
        let e1 = manufactured_error(32);
        let e2 = manufactured_error(64);
        let e3 = manufactured_error(128);
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
        assert!((e2 / e3).log2() > 1.9, "{e2} {e3}");
    }

    #[test]
    fn laplacian_of_quadratic_is_exact() {
        let g = Grid::unit(16);
        let mut f = g.zeros();
        for j in 0..=16 {
            for i in 0..=16 {
                let (x, y) = (i as f64 * g.h, j as f64 * g.h);
                f[g.idx(i, j)] = x * x + 3.0 * y * y;
            }
        }
        let l = laplace(&g, &f);
        for j in 1..16 {
            for i in 1..16 {
                assert!((l[g.idx(i, j)] - 8.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interior_round_trip() {
        let g = Grid::unit(8);
        let f = random_field(&g, 3);
        assert_eq!(g.from_interior(&g.interior_values(&f)), f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn jacobian_is_antisymmetric(seed in 0u64..10_000) {
            let g = Grid::unit(24);
            let a = random_field(&g, seed);
            let b = random_field(&g, seed + 1);
            let ab = jacobian(&g, &a, &b);
            let ba = jacobian(&g, &b, &a);
            let scale = 1.0 / (g.h * g.h);
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!((x + y).abs() <= 1e-13 * scale);
            }
        }
    }
}
