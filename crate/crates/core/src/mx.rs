//! MX blocks and matrices: the reference (nearest-rounding) quantizer, the
//! unbiased 3/4-scaled stochastic-rounding quantizer, dequantization and
//! clipping statistics.
//!
//! A block is 32 consecutive entries along the reduction dimension sharing one
//! power-of-two scale `X = 2^scale_exp`, with
//! `scale_exp = ⌊log2 max|V_i|⌋ − emax_elem` and `emax_elem = 2` for FP4.
//! After division by `X` the largest magnitude lies in `[4, 8)`, so nearest
//! rounding clips everything in `(6, 8)`; scaling by 3/4 first keeps the
//! whole block inside `[−6, 6]` and stochastic rounding then stays unbiased.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::formats::{pow2, Fp4Code, FpFormat, FP4_MAX};
use crate::matrix::Matrix;
use crate::rng::StreamKey;

/// Entries per MX block.
pub const MX_BLOCK: usize = 32;

/// Bytes per serialized block: one scale byte plus 32 packed nibbles.
pub const PACKED_BLOCK_BYTES: usize = 1 + MX_BLOCK / 2;

pub const SCALE_EXP_MIN: i32 = -127;
pub const SCALE_EXP_MAX: i32 = 127;

pub const UNBIASED_PRESCALE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MxBlock {
    pub scale_exp: i8,
    pub codes: [Fp4Code; MX_BLOCK],
}

impl MxBlock {
    pub const ZERO: MxBlock = MxBlock {
        scale_exp: 0,
        codes: [Fp4Code::ZERO; MX_BLOCK],
    };

    pub fn scale(&self) -> f64 {
        pow2(self.scale_exp as i32)
    }

    pub fn dequantize(&self) -> [f64; MX_BLOCK] {
        let x = self.scale();
        let mut out = [0.0; MX_BLOCK];
        for (o, c) in out.iter_mut().zip(&self.codes) {
            *o = c.to_f64() * x;
        }
        out
    }

    /// Scale byte followed by 16 bytes of codes, low nibble first.
    pub fn pack(&self, out: &mut Vec<u8>) {
        out.push(self.scale_exp as u8);
        for pair in self.codes.chunks_exact(2) {
            out.push(pair[0].bits() | (pair[1].bits() << 4));
        }
    }

    pub fn unpack(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PACKED_BLOCK_BYTES {
            return Err(Error::shape(format!(
                "packed MX block needs {PACKED_BLOCK_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let scale_exp = bytes[0] as i8;
        if (scale_exp as i32) < SCALE_EXP_MIN {
            return Err(Error::arg(format!("scale exponent {scale_exp} out of range")));
        }
        let mut codes = [Fp4Code::ZERO; MX_BLOCK];
        for (j, &b) in bytes[1..].iter().enumerate() {
            codes[2 * j] = Fp4Code::from_bits_unchecked(b & 0x0f);
            codes[2 * j + 1] = Fp4Code::from_bits_unchecked(b >> 4);
        }
        Ok(Self { scale_exp, codes })
    }
}

/// Exact `⌊log2 x⌋` for positive finite `x`, read from the bit pattern.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        63 - mantissa.leading_zeros() as i32 - 1074
    } else {
        biased - 1023
    }
}

/// Shared exponent for a block whose largest magnitude is `max_abs`, and
/// whether it had to be clamped to the E8M0 range.
pub fn shared_exp(max_abs: f64) -> (i32, bool) {
    if max_abs == 0.0 {
        return (0, false);
    }
    let e = floor_log2(max_abs) - FpFormat::FP4_E2M1.emax_elem();
    let clamped = e.clamp(SCALE_EXP_MIN, SCALE_EXP_MAX);
    (clamped, clamped != e)
}

/// Counters from one or more quantized blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantStats {
    pub entries: u64,
    pub blocks: u64,
    /// Entries whose scaled magnitude exceeded 6 before rounding.
    pub clipped: u64,
    /// Entries that would have clipped under the reference scaling, i.e.
    /// without the 3/4 prescale. Equals `clipped` on the reference path.
    pub reference_clipped: u64,
    pub scale_exp_sum: i64,
    /// Blocks whose shared exponent was clamped to [−127, 127].
    pub scale_saturations: u64,
    /// Stochastic-rounding inputs outside [−6, 6]; clamped before rounding.
    pub overflow_events: u64,
}

impl QuantStats {
    pub fn clipped_fraction(&self) -> f64 {
        ratio(self.clipped, self.entries)
    }

    pub fn reference_clipped_fraction(&self) -> f64 {
        ratio(self.reference_clipped, self.entries)
    }

    pub fn mean_scale_exp(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.scale_exp_sum as f64 / self.blocks as f64
        }
    }

    pub fn merge(&mut self, other: &QuantStats) {
        self.entries += other.entries;
        self.blocks += other.blocks;
        self.clipped += other.clipped;
        self.reference_clipped += other.reference_clipped;
        self.scale_exp_sum += other.scale_exp_sum;
        self.scale_saturations += other.scale_saturations;
        self.overflow_events += other.overflow_events;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "clipped_fraction": self.clipped_fraction(),
            "reference_clipped_fraction": self.reference_clipped_fraction(),
            "mean_scale_exp": self.mean_scale_exp(),
            "entries": self.entries,
            "blocks": self.blocks,
            "scale_saturations": self.scale_saturations,
            "overflow_events": self.overflow_events,
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn group_header(v: &[f64]) -> Result<(i32, QuantStats)> {
    ensure_finite(v)?;
    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (e, saturated) = shared_exp(max_abs);
    let stats = QuantStats {
        entries: v.len() as u64,
        blocks: 1,
        scale_exp_sum: e as i64,
        scale_saturations: saturated as u64,
        ..Default::default()
    };
    Ok((e, stats))
}

/// Reference quantization of a group of any length sharing one scale:
/// shared exponent from the group maximum, then round-to-nearest-even of
/// `V_i / X` with saturation at ±6. Returns the shared exponent.
pub fn quantize_group_reference(v: &[f64], codes: &mut [Fp4Code]) -> Result<(i32, QuantStats)> {
    debug_assert_eq!(v.len(), codes.len());
    let (e, mut stats) = group_header(v)?;
    // exact reciprocal of a power of two: multiplying rounds like dividing
    let inv_x = pow2(-e);
    for (code, &vi) in codes.iter_mut().zip(v) {
        let scaled = vi * inv_x;
        if scaled.abs() > FP4_MAX {
            stats.clipped += 1;
        }
        *code = Fp4Code::round_nearest(scaled);
    }
    stats.reference_clipped = stats.clipped;
    Ok((e, stats))
}

/// Unbiased quantization of a group of any length sharing one scale: the
/// reference shared exponent, then stochastic rounding of `(3/4) V_i / X`.
/// Entry `i` draws from `key` with `coords[3] = i`.
pub fn quantize_group_unbiased(v: &[f64], key: &StreamKey, codes: &mut [Fp4Code]) -> Result<(i32, QuantStats)> {
    debug_assert_eq!(v.len(), codes.len());
    let (e, mut stats) = group_header(v)?;
    let inv_x = pow2(-e);
    let lanes = key.lanes();
    for (i, (code, &vi)) in codes.iter_mut().zip(v).enumerate() {
        if (vi * inv_x).abs() > FP4_MAX {
            stats.reference_clipped += 1;
        }
        let mut scaled = UNBIASED_PRESCALE * vi * inv_x;
        if scaled.abs() > FP4_MAX {
            // unreachable unless the shared exponent saturated
            stats.overflow_events += 1;
            scaled = scaled.clamp(-FP4_MAX, FP4_MAX);
        }
        *code = Fp4Code::round_stochastic_in_range(scaled, lanes.uniform01(i as u64));
    }
    Ok((e, stats))
}

/// Reference quantization of one 32-entry block.
pub fn quantize_block_reference(v: &[f64; MX_BLOCK]) -> Result<(MxBlock, QuantStats)> {
    let mut codes = [Fp4Code::ZERO; MX_BLOCK];
    let (e, stats) = quantize_group_reference(v, &mut codes)?;
    Ok((
        MxBlock {
            scale_exp: e as i8,
            codes,
        },
        stats,
    ))
}

/// Unbiased quantization of one 32-entry block. The dequantized block is an
/// unbiased estimate of `(3/4) V`.
///
/// Entry `i` draws its dither from `key` with `coords[3] = i`; callers own
/// the other three coordinates.
pub fn quantize_block_unbiased(v: &[f64; MX_BLOCK], key: &StreamKey) -> Result<MxBlock> {
    quantize_block_unbiased_with_stats(v, key).map(|(b, _)| b)
}

pub fn quantize_block_unbiased_with_stats(v: &[f64; MX_BLOCK], key: &StreamKey) -> Result<(MxBlock, QuantStats)> {
    let mut codes = [Fp4Code::ZERO; MX_BLOCK];
    let (e, stats) = quantize_group_unbiased(v, key, &mut codes)?;
    Ok((
        MxBlock {
            scale_exp: e as i8,
            codes,
        },
        stats,
    ))
}

pub fn dequantize_block(b: &MxBlock) -> [f64; MX_BLOCK] {
    b.dequantize()
}

/// Which quantizer an MX conversion uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MxAlgorithm {
    /// Nearest rounding after max-based scaling.
    Reference,
    /// 3/4 prescale plus stochastic rounding.
    Unbiased,
}

/// A row-major matrix quantized along its rows: each run of 32 entries in a row
/// is one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxMatrix {
    rows: usize,
    cols: usize,
    blocks: Vec<MxBlock>,
}

fn check_reduction_dim(cols: usize) -> Result<()> {
    if !cols.is_multiple_of(MX_BLOCK) {
        return Err(Error::shape(format!(
            "reduction dimension {cols} is not a multiple of {MX_BLOCK}"
        )));
    }
    Ok(())
}

fn block_of(row: &[f64], b: usize) -> &[f64; MX_BLOCK] {
    row[b * MX_BLOCK..(b + 1) * MX_BLOCK]
        .try_into()
        .expect("block slice has 32 entries")
}

impl MxMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn blocks_per_row(&self) -> usize {
        self.cols / MX_BLOCK
    }

    pub fn blocks(&self) -> &[MxBlock] {
        &self.blocks
    }

    pub fn block(&self, row: usize, b: usize) -> &MxBlock {
        &self.blocks[row * self.blocks_per_row() + b]
    }

    pub fn from_blocks(rows: usize, cols: usize, blocks: Vec<MxBlock>) -> Result<Self> {
        check_reduction_dim(cols)?;
        if blocks.len() != rows * cols / MX_BLOCK {
            return Err(Error::shape(format!(
                "{} blocks cannot tile a {rows}x{cols} matrix",
                blocks.len()
            )));
        }
        Ok(Self { rows, cols, blocks })
    }

    /// Quantize every row of `m` block by block. With [`MxAlgorithm::Unbiased`]
    /// block `b` of row `r` draws from `key` at coordinates `(r, b, ·, lane)`.
    pub fn quantize(m: &Matrix, algorithm: MxAlgorithm, key: &StreamKey) -> Result<(MxMatrix, QuantStats)> {
        check_reduction_dim(m.cols())?;
        ensure_finite(m.as_slice())?;
        let per_row = m.cols() / MX_BLOCK;
        let rows: Vec<Result<(Vec<MxBlock>, QuantStats)>> = (0..m.rows())
            .into_par_iter()
            .map(|r| {
                let row = m.row(r);
                let mut stats = QuantStats::default();
                let mut blocks = Vec::with_capacity(per_row);
                for b in 0..per_row {
                    let v = block_of(row, b);
                    let (block, s) = match algorithm {
                        MxAlgorithm::Reference => quantize_block_reference(v)?,
                        MxAlgorithm::Unbiased => {
                            quantize_block_unbiased_with_stats(v, &key.at(0, r as u64).at(1, b as u64))?
                        }
                    };
                    stats.merge(&s);
                    blocks.push(block);
                }
                Ok((blocks, stats))
            })
            .collect();
        let mut blocks = Vec::with_capacity(m.rows() * per_row);
        let mut stats = QuantStats::default();
        for row in rows {
            let (b, s) = row?;
            blocks.extend(b);
            stats.merge(&s);
        }
        Ok((
            MxMatrix {
                rows: m.rows(),
                cols: m.cols(),
                blocks,
            },
            stats,
        ))
    }

    pub fn quantize_reference(m: &Matrix) -> Result<(MxMatrix, QuantStats)> {
        // the key is unused on the reference path
        Self::quantize(
            m,
            MxAlgorithm::Reference,
            &StreamKey::new(0, crate::rng::Domain::Dither),
        )
    }

    pub fn quantize_unbiased(m: &Matrix, key: &StreamKey) -> Result<(MxMatrix, QuantStats)> {
        Self::quantize(m, MxAlgorithm::Unbiased, key)
    }

    pub fn dequantize(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for b in &self.blocks {
            data.extend_from_slice(&b.dequantize());
        }
        Matrix::from_vec(self.rows, self.cols, data).expect("block tiling matches shape")
    }

    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.blocks.len() * PACKED_BLOCK_BYTES);
        for b in &self.blocks {
            b.pack(&mut out);
        }
        out
    }

    pub fn from_packed_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        check_reduction_dim(cols)?;
        let n_blocks = rows * cols / MX_BLOCK;
        if bytes.len() != n_blocks * PACKED_BLOCK_BYTES {
            return Err(Error::shape(format!(
                "{rows}x{cols} MXFP4 payload needs {} bytes, got {}",
                n_blocks * PACKED_BLOCK_BYTES,
                bytes.len()
            )));
        }
        let blocks = bytes
            .chunks_exact(PACKED_BLOCK_BYTES)
            .map(MxBlock::unpack)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, cols, blocks })
    }
}

/// Clipping rate of the reference quantizer on `m`, tagged with the name of
/// the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingReport {
    pub label: String,
    pub stats: QuantStats,
}

pub fn measure_clipping(m: &Matrix, dist_label: &str) -> Result<ClippingReport> {
    let (_, stats) = MxMatrix::quantize_reference(m)?;
    Ok(ClippingReport {
        label: dist_label.to_string(),
        stats,
    })
}
