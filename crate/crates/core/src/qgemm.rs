//! Emulated MXFP4 GEMMs and the linear-layer backward pass built on them.
//!
//! Both operands are grouped into MX blocks along the reduction dimension.
//! Each output entry is a sum over blocks of an exact integer dot product of
//! FP4 codes times `X_A·X_B`, accumulated in `f64` in ascending block order.
//! Results therefore do not depend on how rows are split across threads.
//!
//! With stochastic rounding each quantized operand is an unbiased estimate of
//! `3/4` of its input, so the raw product estimates `9/16` of the exact one.
//! [`mxfp4_gemm`] returns that raw product; [`linear_backward`] applies the
//! `16/9` correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{pow2, Fp4Code};
use crate::matrix::Matrix;
use crate::mx::{quantize_group_reference, quantize_group_unbiased, MX_BLOCK};
use crate::rht::{rht_apply, Axis, Direction, RhtKernel, RhtSpec, DEFAULT_RHT_G};
use crate::rng::{Domain, StreamKey};

/// Output rescaling that undoes the two 3/4 operand prescales.
pub const DEBIAS: f64 = 16.0 / 9.0;

const TAG_OPERAND_A: u64 = 0xa;
const TAG_OPERAND_B: u64 = 0xb;
const TAG_SIGNS: u64 = 0x5;
const TAG_DRAWS: u64 = 0xd;
const TAG_GRAD_X: u64 = 0;
const TAG_GRAD_W: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Reference quantizer: max-based scale, nearest rounding, clipping.
    Nearest,
    /// Unbiased quantizer: 3/4 prescale plus stochastic rounding.
    Stochastic,
    /// No quantization; the operands (after any RHT) are multiplied in `f64`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmMode {
    pub rounding: Rounding,
    pub use_rht: bool,
    pub rht_g: usize,
}

impl GemmMode {
    pub const EXACT: GemmMode = GemmMode {
        rounding: Rounding::Exact,
        use_rht: false,
        rht_g: DEFAULT_RHT_G,
    };

    pub fn new(rounding: Rounding) -> Self {
        Self {
            rounding,
            use_rht: false,
            rht_g: DEFAULT_RHT_G,
        }
    }

    pub fn nearest() -> Self {
        Self::new(Rounding::Nearest)
    }

    pub fn stochastic() -> Self {
        Self::new(Rounding::Stochastic)
    }

    #[must_use]
    pub fn with_rht(mut self, g: usize) -> Self {
        self.use_rht = true;
        self.rht_g = g;
        self
    }

    /// Scale the backward pass applies to GEMM outputs.
    pub fn output_correction(&self) -> f64 {
        match self.rounding {
            Rounding::Stochastic => DEBIAS,
            Rounding::Nearest | Rounding::Exact => 1.0,
        }
    }
}

/// Gradients of a bias-free linear layer `y = x·Wᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradPair {
    /// `dL/dy · W`, shaped like `x`.
    pub dldx: Matrix,
    /// `(dL/dy)ᵀ · x`, shaped like `W`.
    pub dldw: Matrix,
}

pub fn exact_gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// RHT block size actually used for a reduction dimension `k`: `g` itself
/// when it divides `k`, or `k` when `k` is a smaller power-of-two multiple of
/// 32 (a narrow layer cannot hold a full segment).
pub fn effective_rht_g(k: usize, g: usize) -> Result<usize> {
    if g == 0 {
        return Err(Error::arg("RHT block size must be positive"));
    }
    if k.is_multiple_of(g) {
        Ok(g)
    } else if k < g && k.is_power_of_two() && k.is_multiple_of(MX_BLOCK) {
        Ok(k)
    } else {
        Err(Error::shape(format!(
            "reduction dimension {k} is not a multiple of the RHT block size {g}"
        )))
    }
}

fn sign_key(key: &StreamKey) -> StreamKey {
    key.derive(TAG_SIGNS).in_domain(Domain::Sign)
}

fn dither_key(key: &StreamKey, tag: u64) -> StreamKey {
    key.derive(tag).in_domain(Domain::Dither)
}

/// Both operands laid out with the reduction dimension along rows, after the
/// optional matched RHT.
struct Operands {
    a: Matrix,
    bt: Matrix,
}

fn prepare(a: &Matrix, b: &Matrix, mode: &GemmMode, signs: &StreamKey) -> Result<Operands> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let k = a.cols();
    if mode.rounding != Rounding::Exact && !k.is_multiple_of(MX_BLOCK) {
        return Err(Error::shape(format!(
            "reduction dimension {k} is not a multiple of {MX_BLOCK}"
        )));
    }
    crate::error::ensure_finite(a.as_slice())?;
    crate::error::ensure_finite(b.as_slice())?;
    let bt = b.transpose();
    if !mode.use_rht {
        return Ok(Operands { a: a.clone(), bt });
    }
    let spec = RhtSpec {
        g: effective_rht_g(k, mode.rht_g)?,
        sign_key: *signs,
        direction: Direction::Forward,
        kernel: RhtKernel::Fast,
    };
    Ok(Operands {
        a: rht_apply(a, Axis::Rows, &spec)?,
        bt: rht_apply(&bt, Axis::Rows, &spec)?,
    })
}

/// FP4 codes as signed half-units plus one exponent per block.
struct CodeMatrix {
    cols: usize,
    half_units: Vec<i8>,
    scale_exps: Vec<i32>,
}

fn quantize_codes(m: &Matrix, rounding: Rounding, key: &StreamKey) -> Result<CodeMatrix> {
    let per_row = m.cols() / MX_BLOCK;
    let rows: Vec<Result<(Vec<i8>, Vec<i32>)>> = (0..m.rows())
        .into_par_iter()
        .map(|r| {
            let row = m.row(r);
            let mut half = Vec::with_capacity(m.cols());
            let mut exps = Vec::with_capacity(per_row);
            let mut codes = [Fp4Code::ZERO; MX_BLOCK];
            for b in 0..per_row {
                let v = &row[b * MX_BLOCK..(b + 1) * MX_BLOCK];
                let (e, _) = match rounding {
                    Rounding::Nearest => quantize_group_reference(v, &mut codes)?,
                    _ => quantize_group_unbiased(v, &key.at(0, r as u64).at(1, b as u64), &mut codes)?,
                };
                exps.push(e);
                half.extend(codes.iter().map(|c| c.half_units() as i8));
            }
            Ok((half, exps))
        })
        .collect();
    let mut out = CodeMatrix {
        cols: m.cols(),
        half_units: Vec::with_capacity(m.rows() * m.cols()),
        scale_exps: Vec::with_capacity(m.rows() * per_row),
    };
    for row in rows {
        let (h, e) = row?;
        out.half_units.extend(h);
        out.scale_exps.extend(e);
    }
    Ok(out)
}

#[inline]
fn block_dot(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

/// `A·Bᵀ` over code matrices, both `rows × K`.
fn code_product(a: &CodeMatrix, bt: &CodeMatrix, a_rows: usize, b_rows: usize) -> Matrix {
    let k = a.cols;
    let per_row = k / MX_BLOCK;
    let data: Vec<f64> = (0..a_rows)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ah = &a.half_units[i * k..(i + 1) * k];
            let ae = &a.scale_exps[i * per_row..(i + 1) * per_row];
            (0..b_rows).map(move |j| {
                let bh = &bt.half_units[j * k..(j + 1) * k];
                let be = &bt.scale_exps[j * per_row..(j + 1) * per_row];
                let mut acc = 0.0f64;
                for blk in 0..per_row {
                    let span = blk * MX_BLOCK..(blk + 1) * MX_BLOCK;
                    let dot = block_dot(&ah[span.clone()], &bh[span]);
                    // half-units on both sides: value = dot / 4 · X_A · X_B
                    acc += dot as f64 * pow2(ae[blk] + be[blk] - 2);
                }
                acc
            })
        })
        .collect();
    Matrix::from_vec(a_rows, b_rows, data).expect("product shape")
}

fn product(ops: &Operands, rounding: Rounding, dither: &StreamKey) -> Result<Matrix> {
    if rounding == Rounding::Exact {
        return ops.a.matmul(&ops.bt.transpose());
    }
    let qa = quantize_codes(&ops.a, rounding, &dither_key(dither, TAG_OPERAND_A))?;
    let qb = quantize_codes(&ops.bt, rounding, &dither_key(dither, TAG_OPERAND_B))?;
    Ok(code_product(&qa, &qb, ops.a.rows(), ops.bt.rows()))
}

/// Emulated MXFP4 product `A·B` for `A: M×K`, `B: K×N`, grouped along `K`.
///
/// Operand dithers are independent streams derived from `key`; with `use_rht`
/// both operands are transformed along `K` with the same per-segment signs
/// (also derived from `key`). In stochastic mode the result estimates
/// `(9/16)·A·B` and is returned uncorrected.
pub fn mxfp4_gemm(a: &Matrix, b: &Matrix, mode: &GemmMode, key: &StreamKey) -> Result<Matrix> {
    let ops = prepare(a, b, mode, &sign_key(key))?;
    product(&ops, mode.rounding, key)
}

/// Backward pass of a bias-free linear layer `y = x·Wᵀ` with MXFP4 GEMMs:
/// `dL/dx = dL/dy · W` (reduction over `m`) and `dL/dW = (dL/dy)ᵀ · x`
/// (reduction over the batch `b`). Stochastic mode multiplies both by 16/9,
/// making them unbiased.
pub fn linear_backward(dldy: &Matrix, x: &Matrix, w: &Matrix, mode: &GemmMode, key: &StreamKey) -> Result<GradPair> {
    let (dldx, dldw) = linear_backward_parts(dldy, x, w, mode, key, true, mode.output_correction())?;
    Ok(GradPair {
        dldx: dldx.expect("requested"),
        dldw,
    })
}

/// [`linear_backward`] with the input gradient optional and the output
/// correction explicit. The self-test uses the latter to plant a fault.
pub(crate) fn linear_backward_parts(
    dldy: &Matrix,
    x: &Matrix,
    w: &Matrix,
    mode: &GemmMode,
    key: &StreamKey,
    want_dldx: bool,
    correction: f64,
) -> Result<(Option<Matrix>, Matrix)> {
    let (b, m) = dldy.shape();
    let n = x.cols();
    if x.rows() != b || w.shape() != (m, n) {
        return Err(Error::shape(format!(
            "dL/dy {b}x{m}, x {}x{}, W {}x{} are inconsistent",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if mode.rounding != Rounding::Exact {
        for (name, d) in [("m", m), ("n", n), ("batch", b)] {
            if d % MX_BLOCK != 0 {
                return Err(Error::shape(format!("{name} = {d} is not a multiple of {MX_BLOCK}")));
            }
        }
    }
    let dldx = if want_dldx {
        let mut g = mxfp4_gemm(dldy, w, mode, &key.derive(TAG_GRAD_X))?;
        g.scale(correction);
        Some(g)
    } else {
        None
    };
    let mut dldw = mxfp4_gemm(&dldy.transpose(), x, mode, &key.derive(TAG_GRAD_W))?;
    dldw.scale(correction);
    Ok((dldx, dldw))
}

/// How entries of a vector share scales when quantized for a dot product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// Hardware MX blocks of 32 entries.
    Mx32,
    /// One scale for the whole vector.
    Whole,
}

impl Grouping {
    fn group_len(&self, len: usize) -> usize {
        match self {
            Grouping::Mx32 => MX_BLOCK,
            Grouping::Whole => len,
        }
    }
}

/// Sample mean and variance of repeated quantized dot products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotMoments {
    pub mean: f64,
    pub variance: f64,
    pub n_draws: usize,
}

/// Quantizes `v` group by group and returns `Σ_groups X_g · Σ codes·other`.
/// Reused scratch buffers keep the hot loop allocation-free.
struct DotScratch {
    codes_a: Vec<Fp4Code>,
    codes_b: Vec<Fp4Code>,
    exps_a: Vec<i32>,
    exps_b: Vec<i32>,
}

impl DotScratch {
    fn new(len: usize, group: usize) -> Self {
        Self {
            codes_a: vec![Fp4Code::ZERO; len],
            codes_b: vec![Fp4Code::ZERO; len],
            exps_a: vec![0; len / group],
            exps_b: vec![0; len / group],
        }
    }
}

fn quantize_vector(
    v: &[f64],
    group: usize,
    rounding: Rounding,
    key: &StreamKey,
    codes: &mut [Fp4Code],
    exps: &mut [i32],
) -> Result<()> {
    for (g, (chunk, out)) in v.chunks_exact(group).zip(codes.chunks_exact_mut(group)).enumerate() {
        let (e, _) = match rounding {
            Rounding::Nearest => quantize_group_reference(chunk, out)?,
            _ => quantize_group_unbiased(chunk, &key.at(1, g as u64), out)?,
        };
        exps[g] = e;
    }
    Ok(())
}

fn quantized_dot(
    a: &[f64],
    b: &[f64],
    group: usize,
    rounding: Rounding,
    dither: &StreamKey,
    scratch: &mut DotScratch,
) -> Result<f64> {
    if rounding == Rounding::Exact {
        return Ok(a.iter().zip(b).map(|(x, y)| x * y).sum());
    }
    quantize_vector(
        a,
        group,
        rounding,
        &dither_key(dither, TAG_OPERAND_A),
        &mut scratch.codes_a,
        &mut scratch.exps_a,
    )?;
    quantize_vector(
        b,
        group,
        rounding,
        &dither_key(dither, TAG_OPERAND_B),
        &mut scratch.codes_b,
        &mut scratch.exps_b,
    )?;
    let mut acc = 0.0;
    for (g, (ca, cb)) in scratch
        .codes_a
        .chunks_exact(group)
        .zip(scratch.codes_b.chunks_exact(group))
        .enumerate()
    {
        let dot: i64 = ca
            .iter()
            .zip(cb)
            .map(|(x, y)| x.half_units() as i64 * y.half_units() as i64)
            .sum();
        acc += dot as f64 * pow2(scratch.exps_a[g] + scratch.exps_b[g] - 2);
    }
    Ok(acc)
}

/// Moments of the (corrected, in stochastic mode) quantized dot product
/// `Q(a)ᵀQ(b)` over `n_draws` independent dithers. The RHT signs, when used,
/// are drawn once from `key` and held fixed across draws; with
/// [`Grouping::Whole`] the transform may span the whole vector.
pub fn dot_moments(
    a: &[f64],
    b: &[f64],
    mode: &GemmMode,
    grouping: Grouping,
    n_draws: usize,
    key: &StreamKey,
) -> Result<DotMoments> {
    let len = a.len();
    if b.len() != len {
        return Err(Error::shape(format!("vectors of length {len} and {}", b.len())));
    }
    if len == 0 || !len.is_multiple_of(MX_BLOCK) {
        return Err(Error::shape(format!(
            "length {len} is not a positive multiple of {MX_BLOCK}"
        )));
    }
    if n_draws < 2 {
        return Err(Error::arg("variance needs at least two draws"));
    }
    crate::error::ensure_finite(a)?;
    crate::error::ensure_finite(b)?;
    let (mut ta, mut tb) = (a.to_vec(), b.to_vec());
    if mode.use_rht {
        let g = mode.rht_g;
        if g == 0 || !g.is_power_of_two() || !len.is_multiple_of(g) {
            return Err(Error::shape(format!(
                "length {len} is not a multiple of the RHT block size {g}"
            )));
        }
        let spec = RhtSpec {
            g,
            sign_key: sign_key(key),
            direction: Direction::Forward,
            kernel: RhtKernel::Fast,
        };
        ta = rht_apply(&Matrix::from_vec(1, len, ta)?, Axis::Rows, &spec)?.into_vec();
        tb = rht_apply(&Matrix::from_vec(1, len, tb)?, Axis::Rows, &spec)?.into_vec();
    }
    let group = grouping.group_len(len);
    let mut scratch = DotScratch::new(len, group);
    let correction = mode.output_correction();
    // Welford keeps the running variance stable for large draw counts
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    let draws = key.derive(TAG_DRAWS);
    for d in 0..n_draws {
        let draw_key = draws.at(0, d as u64);
        let v = correction * quantized_dot(&ta, &tb, group, mode.rounding, &draw_key, &mut scratch)?;
        let delta = v - mean;
        mean += delta / (d + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok(DotMoments {
        mean,
        variance: m2 / (n_draws - 1) as f64,
        n_draws,
    })
}

/// Empirical variance of the quantized dot product with hardware MX blocks.
pub fn gemm_variance(a: &[f64], b: &[f64], mode: &GemmMode, n_draws: usize, key: &StreamKey) -> Result<f64> {
    dot_moments(a, b, mode, Grouping::Mx32, n_draws, key).map(|m| m.variance)
}
