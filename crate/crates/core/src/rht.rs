//! Orthonormal Hadamard matrices and the blockwise random Hadamard transform.
//!
//! A matrix axis is cut into contiguous segments of length `g`; segment `j`
//! is mapped `x ↦ H·diag(S_j)·x` with its own sign vector `S_j`. Because the
//! map is orthogonal, two GEMM operands transformed along the reduction axis
//! with the same signs have the same product as the originals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{sign_vector, StreamKey};

pub const DEFAULT_RHT_G: usize = 64;
pub const MAX_RHT_G: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct HadamardMatrix {
    g: usize,
    entries: Matrix,
}

impl HadamardMatrix {
    pub fn g(&self) -> usize {
        self.g
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

/// Sylvester construction with `H_1 = [1]` and a `1/√2` factor per doubling,
/// so every entry is `±1/√g` and `H·Hᵀ = I`.
pub fn hadamard(g: usize) -> Result<HadamardMatrix> {
    if g == 0 || !g.is_power_of_two() {
        return Err(Error::arg(format!("Hadamard size {g} is not a power of two")));
    }
    // recurse on ±1 and normalize once, which keeps entries exactly ±1/√g
    let mut signs = vec![1i8];
    let mut n = 1;
    while n < g {
        let mut next = vec![0i8; 4 * n * n];
        for i in 0..n {
            for j in 0..n {
                let s = signs[i * n + j];
                next[i * 2 * n + j] = s;
                next[i * 2 * n + j + n] = s;
                next[(i + n) * 2 * n + j] = s;
                next[(i + n) * 2 * n + j + n] = -s;
            }
        }
        signs = next;
        n *= 2;
    }
    let scale = 1.0 / (g as f64).sqrt();
    let entries = Matrix::from_vec(g, g, signs.iter().map(|&s| s as f64 * scale).collect())?;
    Ok(HadamardMatrix { g, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Which way segments run through a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Segments are contiguous runs within each row.
    Rows,
    /// Segments run down each column.
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RhtKernel {
    /// Dense `g×g` product per segment.
    #[default]
    Dense,
    /// In-place fast Walsh–Hadamard butterflies, `O(g log g)` per segment.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhtSpec {
    pub g: usize,
    /// Segment `j` uses the signs of this key with `coords[2] = j`.
    pub sign_key: StreamKey,
    pub direction: Direction,
    pub kernel: RhtKernel,
}

impl RhtSpec {
    pub fn new(g: usize, sign_key: StreamKey) -> Result<Self> {
        validate_g(g)?;
        Ok(Self {
            g,
            sign_key,
            direction: Direction::Forward,
            kernel: RhtKernel::Dense,
        })
    }

    #[must_use]
    pub fn inverse(mut self) -> Self {
        self.direction = match self.direction {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        };
        self
    }

    #[must_use]
    pub fn with_kernel(mut self, kernel: RhtKernel) -> Self {
        self.kernel = kernel;
        self
    }

    #[must_use]
    pub fn with_g(mut self, g: usize) -> Self {
        self.g = g;
        self
    }

    pub fn segment_signs(&self, segment: usize) -> Vec<f64> {
        sign_vector(&self.sign_key.at(2, segment as u64), self.g)
    }
}

/// Block sizes usable for the GEMM transform: powers of two, multiples of 32,
/// at most 1024.
pub fn validate_g(g: usize) -> Result<()> {
    if !g.is_power_of_two() || !g.is_multiple_of(32) || g > MAX_RHT_G {
        return Err(Error::arg(format!(
            "RHT block size {g} must be a power of two, a multiple of 32 and at most {MAX_RHT_G}"
        )));
    }
    Ok(())
}

/// Unnormalized in-place Walsh–Hadamard transform in Sylvester order.
pub fn fwht_in_place(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// `H·diag(signs)·x` (forward) or `diag(signs)·Hᵀ·x` (inverse) on one segment.
fn transform_segment_fast(x: &mut [f64], signs: &[f64], direction: Direction) {
    let scale = 1.0 / (x.len() as f64).sqrt();
    match direction {
        Direction::Forward => {
            x.iter_mut().zip(signs).for_each(|(v, s)| *v *= s);
            fwht_in_place(x);
            x.iter_mut().for_each(|v| *v *= scale);
        }
        Direction::Inverse => {
            // Sylvester H is symmetric
            fwht_in_place(x);
            x.iter_mut().zip(signs).for_each(|(v, s)| *v *= scale * s);
        }
    }
}

/// Dense per-segment operator: `H·diag(S)` or `diag(S)·Hᵀ`.
fn segment_operator(h: &HadamardMatrix, signs: &[f64], direction: Direction) -> Matrix {
    let g = h.g;
    let e = &h.entries;
    match direction {
        Direction::Forward => Matrix::from_fn(g, g, |r, c| e[(r, c)] * signs[c]),
        Direction::Inverse => Matrix::from_fn(g, g, |r, c| signs[r] * e[(c, r)]),
    }
}

/// Apply the blockwise RHT along `axis`. The transformed axis length must be a
/// multiple of `spec.g`.
pub fn rht_apply(m: &Matrix, axis: Axis, spec: &RhtSpec) -> Result<Matrix> {
    match axis {
        Axis::Rows => transform_rows(m, spec),
        Axis::Cols => Ok(transform_rows(&m.transpose(), spec)?.transpose()),
    }
}

fn transform_rows(m: &Matrix, spec: &RhtSpec) -> Result<Matrix> {
    let g = spec.g;
    if g == 0 || !g.is_power_of_two() {
        return Err(Error::arg(format!("RHT block size {g} is not a power of two")));
    }
    if !m.cols().is_multiple_of(g) {
        return Err(Error::shape(format!(
            "axis length {} is not a multiple of the RHT block size {g}",
            m.cols()
        )));
    }
    let segments = m.cols() / g;
    let mut out = m.clone();
    match spec.kernel {
        RhtKernel::Fast => {
            for j in 0..segments {
                let signs = spec.segment_signs(j);
                for i in 0..m.rows() {
                    let seg = &mut out.row_mut(i)[j * g..(j + 1) * g];
                    transform_segment_fast(seg, &signs, spec.direction);
                }
            }
        }
        RhtKernel::Dense => {
            let h = hadamard(g)?;
            for j in 0..segments {
                let op = segment_operator(&h, &spec.segment_signs(j), spec.direction);
                for i in 0..m.rows() {
                    let x = &m.row(i)[j * g..(j + 1) * g];
                    let y = &mut out.row_mut(i)[j * g..(j + 1) * g];
                    for (r, yr) in y.iter_mut().enumerate() {
                        *yr = op.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One row of a tail-bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub a: f64,
    /// Fraction of trials with `max_i |(HSx)_i| ≥ a`.
    pub empirical: f64,
    /// Union bound `min(1, 2g·exp(−a²g / (2‖x‖²)))`.
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
}

impl TailRow {
    pub fn holds(&self) -> bool {
        self.empirical <= self.bound + self.slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub g: usize,
    pub n_trials: usize,
    pub rows: Vec<TailRow>,
}

impl TailTable {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(TailRow::holds)
    }
}

/// Thresholds `k/2 · ‖x‖/√g` for `k = 1..=12`.
pub fn default_thresholds(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = if norm == 0.0 {
        1.0
    } else {
        norm / (x.len() as f64).sqrt()
    };
    (1..=12).map(|k| k as f64 * 0.5 * unit).collect()
}

/// Empirical exceedance of `‖HSx‖∞` over `n_trials` fresh sign vectors
/// (trial `t` uses `key` with `coords[2] = t`), against the union of the
/// per-coordinate sub-Gaussian tail bounds.
pub fn tail_bound_check(x: &[f64], thresholds: &[f64], n_trials: usize, key: &StreamKey) -> Result<TailTable> {
    let g = x.len();
    if g < 32 || !g.is_power_of_two() {
        return Err(Error::arg(format!(
            "tail check needs a power-of-two length of at least 32, got {g}"
        )));
    }
    if n_trials == 0 {
        return Err(Error::arg("tail check needs at least one trial"));
    }
    if thresholds.iter().any(|&a| a.is_nan() || a <= 0.0) {
        return Err(Error::arg("thresholds must be positive"));
    }
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    let mut counts = vec![0usize; thresholds.len()];
    let mut buf = vec![0.0; g];
    for t in 0..n_trials {
        let signs = sign_vector(&key.at(2, t as u64), g);
        buf.copy_from_slice(x);
        transform_segment_fast(&mut buf, &signs, Direction::Forward);
        let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (c, &a) in counts.iter_mut().zip(thresholds) {
            if peak >= a {
                *c += 1;
            }
        }
    }
    let n = n_trials as f64;
    let rows = thresholds
        .iter()
        .zip(&counts)
        .map(|(&a, &c)| {
            let bound = if norm_sq == 0.0 {
                0.0
            } else {
                (2.0 * g as f64 * (-a * a * g as f64 / (2.0 * norm_sq)).exp()).min(1.0)
            };
            TailRow {
                a,
                empirical: c as f64 / n,
                bound,
                slack: 3.0 * (bound * (1.0 - bound) / n).sqrt(),
            }
        })
        .collect();
    Ok(TailTable { g, n_trials, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = StreamKey::new(seed, Domain::Data).rng();
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn max_dev_from_identity(m: &Matrix) -> f64 {
        let id = Matrix::identity(m.rows());
        m.as_slice()
            .iter()
            .zip(id.as_slice())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    #[test]
    fn base_case_and_size_two() {
        assert_eq!(hadamard(1).unwrap().entries().as_slice(), &[1.0]);
        let h = hadamard(2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [r, r, r, -r];
        for (a, b) in h.entries().as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(hadamard(3).is_err());
        assert!(hadamard(0).is_err());
    }

    #[test]
    fn size_64_orthonormal() {
        let h = hadamard(64).unwrap();
        assert!(h.entries().as_slice().iter().all(|v| v.abs() == 0.125));
        let hth = h.entries().transpose().matmul(h.entries()).unwrap();
        assert!(max_dev_from_identity(&hth) < 1e-6);
    }

    #[test]
    fn entries_follow_popcount_rule() {
        // oracle: H[i][j] = (−1)^popcount(i & j) / √g
        let g = 128;
        let h = hadamard(g).unwrap();
        for i in 0..g {
            for j in 0..g {
                let s = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(h.entries()[(i, j)], s / (g as f64).sqrt());
            }
        }
    }

    #[test]
    fn identity_when_g_is_one_and_signs_positive() {
        // g = 1 has H = [1]; only the sign can change the value
        let m = gaussian(3, 5, 1);
        let spec = RhtSpec {
            g: 1,
            sign_key: StreamKey::new(0, Domain::Sign),
            direction: Direction::Forward,
            kernel: RhtKernel::Dense,
        };
        let out = rht_apply(&m, Axis::Rows, &spec).unwrap();
        for j in 0..5 {
            let s = spec.segment_signs(j)[0];
            for i in 0..3 {
                assert_eq!(out[(i, j)], s * m[(i, j)]);
            }
        }
    }

    #[test]
    fn segment_norms_preserved() {
        let m = gaussian(64, 128, 2);
        let spec = RhtSpec::new(64, StreamKey::new(3, Domain::Sign)).unwrap();
        let out = rht_apply(&m, Axis::Rows, &spec).unwrap();
        for i in 0..64 {
            for j in 0..2 {
                let n0: f64 = m.row(i)[j * 64..(j + 1) * 64].iter().map(|v| v * v).sum();
                let n1: f64 = out.row(i)[j * 64..(j + 1) * 64].iter().map(|v| v * v).sum();
                assert!(((n1 - n0) / n0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn one_hot_spreads_evenly() {
        let mut m = Matrix::zeros(1, 64);
        m[(0, 0)] = 1.0;
        let spec = RhtSpec::new(64, StreamKey::new(4, Domain::Sign)).unwrap();
        for kernel in [RhtKernel::Dense, RhtKernel::Fast] {
            let out = rht_apply(&m, Axis::Rows, &spec.with_kernel(kernel)).unwrap();
            assert!(out.as_slice().iter().all(|v| v.abs() == 0.125));
        }
    }

    #[test]
    fn forward_then_inverse_recovers() {
        let m = gaussian(32, 256, 5);
        for axis in [Axis::Rows, Axis::Cols] {
            let spec = RhtSpec::new(32, StreamKey::new(6, Domain::Sign)).unwrap();
            let fwd = rht_apply(&m, axis, &spec).unwrap();
            let back = rht_apply(&fwd, axis, &spec.inverse()).unwrap();
            assert!(back.rel_frobenius_error(&m) < 1e-5);
        }
    }

    #[test]
    fn fast_kernel_matches_dense() {
        let m = gaussian(16, 512, 7);
        for g in [32, 64, 128, 256, 512] {
            let spec = RhtSpec::new(g, StreamKey::new(g as u64, Domain::Sign)).unwrap();
            for s in [spec, spec.inverse()] {
                let dense = rht_apply(&m, Axis::Rows, &s).unwrap();
                let fast = rht_apply(&m, Axis::Rows, &s.with_kernel(RhtKernel::Fast)).unwrap();
                assert!(fast.rel_frobenius_error(&dense) < 1e-12, "g = {g}");
            }
        }
    }

    #[test]
    fn divisibility_is_a_shape_error() {
        let m = Matrix::zeros(2, 96);
        let spec = RhtSpec::new(64, StreamKey::new(0, Domain::Sign)).unwrap();
        assert!(matches!(rht_apply(&m, Axis::Rows, &spec), Err(Error::Shape(_))));
        assert!(RhtSpec::new(48, StreamKey::new(0, Domain::Sign)).is_err());
        assert!(RhtSpec::new(2048, StreamKey::new(0, Domain::Sign)).is_err());
    }

    #[test]
    fn matched_transforms_cancel_in_products() {
        let a = gaussian(128, 64, 8);
        let b = gaussian(128, 96, 9);
        let exact = a.transpose().matmul(&b).unwrap();
        for g in [32, 64, 128] {
            let spec = RhtSpec::new(g, StreamKey::new(10, Domain::Sign)).unwrap();
            let ta = rht_apply(&a, Axis::Cols, &spec).unwrap();
            let tb = rht_apply(&b, Axis::Cols, &spec).unwrap();
            let got = ta.transpose().matmul(&tb).unwrap();
            assert!(got.rel_frobenius_error(&exact) < 1e-4);
        }
    }

    #[test]
    fn outlier_concentrates() {
        let mut x = vec![1.0; 128];
        x[0] = 10.0;
        let key = StreamKey::new(11, Domain::Sign);
        let trials = 10_000;
        let below = (0..trials)
            .filter(|&t| {
                let mut y = x.clone();
                transform_segment_fast(&mut y, &sign_vector(&key.at(2, t), 128), Direction::Forward);
                y.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 10.0
            })
            .count();
        assert!(below as f64 >= 0.99 * trials as f64, "{below}");
    }

    #[test]
    fn tail_of_zero_vector() {
        let x = vec![0.0; 64];
        let t = tail_bound_check(&x, &[0.1, 1.0], 100, &StreamKey::new(0, Domain::Sign)).unwrap();
        assert!(t.rows.iter().all(|r| r.empirical == 0.0));
        assert!(t.holds());
    }

    #[test]
    fn tail_of_one_hot() {
        let mut x = vec![0.0; 64];
        x[3] = 1.0;
        let t = tail_bound_check(&x, &[0.125], 500, &StreamKey::new(1, Domain::Sign)).unwrap();
        assert_eq!(t.rows[0].empirical, 1.0);
        assert!(t.holds());
    }

    #[test]
    fn tail_rejects_bad_input() {
        let key = StreamKey::new(0, Domain::Sign);
        assert!(tail_bound_check(&[1.0; 16], &[1.0], 10, &key).is_err());
        assert!(tail_bound_check(&[1.0; 64], &[0.0], 10, &key).is_err());
    }
}
