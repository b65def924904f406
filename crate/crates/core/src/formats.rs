//! Floating-point format descriptors, the FP4 E2M1 element type, and
//! nearest / stochastic rounding onto arbitrary symmetric grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform01, StreamKey};

/// How a format spends its top exponent code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialValues {
    /// All-ones exponent is reserved for Inf/NaN.
    Ieee,
    /// Only the all-ones bit pattern is NaN (OCP FP8 E4M3).
    NanOnly,
    /// Every code is a finite number (FP4 E2M1).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpFormat {
    pub name: &'static str,
    pub exp_bits: u32,
    pub mantissa_bits: u32,
    pub exp_bias: i32,
    pub specials: SpecialValues,
}

impl FpFormat {
    pub const FP64: FpFormat = FpFormat::ieee("FP64", 11, 52);
    pub const FP32: FpFormat = FpFormat::ieee("FP32", 8, 23);
    pub const FP16: FpFormat = FpFormat::ieee("FP16", 5, 10);
    pub const BF16: FpFormat = FpFormat::ieee("BF16", 8, 7);
    pub const FP8_E4M3: FpFormat = FpFormat {
        name: "FP8 E4M3",
        exp_bits: 4,
        mantissa_bits: 3,
        exp_bias: 7,
        specials: SpecialValues::NanOnly,
    };
    pub const FP8_E5M2: FpFormat = FpFormat::ieee("FP8 E5M2", 5, 2);
    pub const FP4_E2M1: FpFormat = FpFormat {
        name: "FP4",
        exp_bits: 2,
        mantissa_bits: 1,
        exp_bias: 1,
        specials: SpecialValues::None,
    };

    /// The formats of the common hardware table, widest first.
    pub const TABLE: [FpFormat; 7] = [
        Self::FP64,
        Self::FP32,
        Self::FP16,
        Self::BF16,
        Self::FP8_E4M3,
        Self::FP8_E5M2,
        Self::FP4_E2M1,
    ];

    const fn ieee(name: &'static str, exp_bits: u32, mantissa_bits: u32) -> Self {
        FpFormat {
            name,
            exp_bits,
            mantissa_bits,
            exp_bias: (1 << (exp_bits - 1)) - 1,
            specials: SpecialValues::Ieee,
        }
    }

    pub fn total_bits(&self) -> u32 {
        1 + self.exp_bits + self.mantissa_bits
    }

    /// Unbiased exponent of the largest normal number.
    pub fn emax_elem(&self) -> i32 {
        let top = (1i32 << self.exp_bits) - 1;
        match self.specials {
            SpecialValues::Ieee => top - 1 - self.exp_bias,
            SpecialValues::NanOnly | SpecialValues::None => top - self.exp_bias,
        }
    }

    pub fn max_normal(&self) -> f64 {
        let m = self.mantissa_bits as i32;
        let frac_fields = (1u64 << m) as f64;
        let top_mantissa = match self.specials {
            // all-ones mantissa at the top exponent is the NaN pattern
            SpecialValues::NanOnly => frac_fields - 2.0,
            _ => frac_fields - 1.0,
        };
        (1.0 + top_mantissa / frac_fields) * pow2(self.emax_elem())
    }

    /// Smallest positive subnormal.
    pub fn min_subnormal(&self) -> f64 {
        pow2(1 - self.exp_bias - self.mantissa_bits as i32)
    }
}

/// Exact `2^e` for every exponent representable in `f64`, including the
/// subnormal range; saturates to `0` / `inf` beyond it.
pub fn pow2(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// Value of the bit fields `(sign, mantissa, exponent)` under `fmt`.
///
/// Normal encodings follow `(−1)^S (1 + M/2^m) 2^(E − bias)`; a zero exponent
/// field gives the subnormal `(−1)^S · M · 2^(1 − bias − m)`. The top exponent
/// code is evaluated by the same formula; Inf/NaN semantics are not modelled.
pub fn fp_value(sign: u32, mantissa_field: u64, exponent_field: u64, fmt: &FpFormat) -> Result<f64> {
    if sign > 1 {
        return Err(Error::arg(format!("sign bit must be 0 or 1, got {sign}")));
    }
    if mantissa_field >> fmt.mantissa_bits != 0 {
        return Err(Error::arg(format!(
            "mantissa field {mantissa_field} does not fit in {} bits",
            fmt.mantissa_bits
        )));
    }
    if exponent_field >> fmt.exp_bits != 0 {
        return Err(Error::arg(format!(
            "exponent field {exponent_field} does not fit in {} bits",
            fmt.exp_bits
        )));
    }
    let m = fmt.mantissa_bits as i32;
    let magnitude = if exponent_field == 0 {
        mantissa_field as f64 * pow2(1 - fmt.exp_bias - m)
    } else {
        let significand = 1.0 + mantissa_field as f64 * pow2(-m);
        significand * pow2(exponent_field as i32 - fmt.exp_bias)
    };
    Ok(if sign == 1 { -magnitude } else { magnitude })
}

/// Sorted, symmetric set of representable reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    values: Vec<f64>,
    delta: f64,
    zero_index: usize,
}

impl QuantGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("grid values must be finite"));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        // +0 and -0 collapse to one grid point
        for v in values.iter_mut() {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        values.dedup();
        let zero_index = values
            .iter()
            .position(|&v| v == 0.0)
            .ok_or_else(|| Error::arg("grid must contain 0"))?;
        let n = values.len();
        for (i, &v) in values.iter().enumerate() {
            if values[n - 1 - i] != -v {
                return Err(Error::arg(format!("grid is not symmetric around 0 at {v}")));
            }
        }
        let delta = values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        Ok(Self {
            values,
            delta,
            zero_index,
        })
    }

    /// All finite values of a format, by exhaustive enumeration of its codes.
    pub fn from_format(fmt: &FpFormat) -> Result<Self> {
        if fmt.total_bits() > 16 {
            return Err(Error::arg(format!("{} has too many codes to enumerate", fmt.name)));
        }
        let exp_codes = 1u64 << fmt.exp_bits;
        let man_codes = 1u64 << fmt.mantissa_bits;
        let mut values = Vec::new();
        for sign in 0..2 {
            for e in 0..exp_codes {
                for m in 0..man_codes {
                    let reserved = match fmt.specials {
                        SpecialValues::Ieee => e == exp_codes - 1,
                        SpecialValues::NanOnly => e == exp_codes - 1 && m == man_codes - 1,
                        SpecialValues::None => false,
                    };
                    if !reserved {
                        values.push(fp_value(sign, m, e, fmt)?);
                    }
                }
            }
        }
        Self::new(values)
    }

    pub fn fp4() -> Self {
        Self::new(FP4_MAGNITUDES.iter().flat_map(|&v| [v, -v]).collect()).expect("FP4 grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest gap between consecutive grid points.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn contains(&self, x: f64) -> bool {
        self.values.binary_search_by(|v| v.total_cmp(&x)).is_ok() || x == 0.0
    }

    /// Index of `values[i]` among the non-negative grid magnitudes. For FP4 this
    /// is the 3-bit magnitude code, so its parity is the mantissa bit.
    fn magnitude_index(&self, i: usize) -> usize {
        i.abs_diff(self.zero_index)
    }

    /// Indices of the largest grid point `<= x` and the smallest `>= x`.
    /// Equal when `x` is on the grid. `None` outside `[min, max]`.
    fn bracket_indices(&self, x: f64) -> Option<(usize, usize)> {
        if !(self.min()..=self.max()).contains(&x) {
            return None;
        }
        // first index with value > x
        let upper = self.values.partition_point(|&v| v <= x);
        let lo = upper - 1;
        if self.values[lo] == x {
            Some((lo, lo))
        } else {
            Some((lo, upper))
        }
    }

    /// `(f(x), c(x))`: the grid points bracketing `x`.
    pub fn bracket(&self, x: f64) -> Option<(f64, f64)> {
        self.bracket_indices(x)
            .map(|(lo, hi)| (self.values[lo], self.values[hi]))
    }
}

/// Round to the closest grid point, saturating outside the grid. Ties go to the
/// point with the even magnitude index.
pub fn nearest_round(x: f64, grid: &QuantGrid) -> Result<f64> {
    if x.is_nan() || x.is_infinite() {
        return Err(Error::arg(format!("cannot round {x}")));
    }
    if x >= grid.max() {
        return Ok(grid.max());
    }
    if x <= grid.min() {
        return Ok(grid.min());
    }
    let (lo, hi) = grid.bracket_indices(x).expect("x is inside the grid");
    let (f, c) = (grid.values[lo], grid.values[hi]);
    let below = x - f;
    let above = c - x;
    let pick = if below < above {
        lo
    } else if above < below {
        hi
    } else if grid.magnitude_index(lo).is_multiple_of(2) {
        lo
    } else {
        hi
    };
    Ok(grid.values[pick])
}

/// Stochastic rounding driven by an explicit uniform draw `u ∈ [0, 1)`:
/// returns `c(x)` when `u < (x − f(x)) / (c(x) − f(x))`, else `f(x)`.
pub fn stochastic_round_with(x: f64, grid: &QuantGrid, u: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::arg(format!("cannot round {x}")));
    }
    let (f, c) = grid.bracket(x).ok_or(Error::Overflow {
        value: x,
        min: grid.min(),
        max: grid.max(),
    })?;
    if f == c {
        return Ok(f);
    }
    let p_up = (x - f) / (c - f);
    Ok(if u < p_up { c } else { f })
}

/// Stochastic rounding with the dither drawn from `key`. The expectation over
/// keys equals `x` exactly.
pub fn stochastic_round(x: f64, grid: &QuantGrid, key: &StreamKey) -> Result<f64> {
    stochastic_round_with(x, grid, uniform01(key))
}

/// Representable FP4 magnitudes, indexed by the 3-bit magnitude code.
pub const FP4_MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

/// FP4 magnitudes in units of 0.5; products of two fit an exact integer dot.
pub(crate) const FP4_HALF_UNITS: [i8; 8] = [0, 1, 2, 3, 4, 6, 8, 12];

pub const FP4_MAX: f64 = 6.0;

const FP4_INV_GAPS: [f64; 7] = [2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 0.5];

/// FP4 E2M1 code: bit 3 sign, bits 2..1 exponent, bit 0 mantissa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Fp4Code(u8);

impl Fp4Code {
    pub const ZERO: Fp4Code = Fp4Code(0);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits > 0x0f {
            return Err(Error::arg(format!("{bits:#x} is not a 4-bit code")));
        }
        Ok(Self(bits))
    }

    #[inline]
    pub(crate) fn from_bits_unchecked(bits: u8) -> Self {
        Self(bits & 0x0f)
    }

    #[inline]
    pub fn bits(self) -> u8 {
        self.0
    }

    #[inline]
    fn negative(self) -> bool {
        self.0 & 0x08 != 0
    }

    #[inline]
    fn magnitude_code(self) -> usize {
        (self.0 & 0x07) as usize
    }

    /// Decoded value; the negative-zero code decodes to `+0.0`.
    #[inline]
    pub fn to_f64(self) -> f64 {
        let mag = FP4_MAGNITUDES[self.magnitude_code()];
        if self.negative() && mag != 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// Twice the decoded value, as an integer.
    #[inline]
    pub(crate) fn half_units(self) -> i32 {
        let mag = FP4_HALF_UNITS[self.magnitude_code()] as i32;
        if self.negative() {
            -mag
        } else {
            mag
        }
    }

    #[inline]
    fn with_sign(magnitude_code: usize, negative: bool) -> Self {
        if magnitude_code == 0 || !negative {
            Self(magnitude_code as u8)
        } else {
            Self(0x08 | magnitude_code as u8)
        }
    }

    /// Exact encoding of a grid value; zero always maps to `+0`.
    pub fn encode(v: f64) -> Result<Self> {
        let mag = v.abs();
        FP4_MAGNITUDES
            .iter()
            .position(|&m| m == mag)
            .map(|code| Self::with_sign(code, v < 0.0))
            .ok_or_else(|| Error::arg(format!("{v} is not an FP4 value")))
    }

    /// Magnitude codes `(floor, ceil)` bracketing `a ∈ [0, 6]`.
    #[inline]
    fn bracket_magnitude(a: f64) -> (usize, usize) {
        // branchless count of grid magnitudes at or below `a`
        let lo = FP4_MAGNITUDES[1..].iter().map(|&m| (a >= m) as usize).sum::<usize>();
        if FP4_MAGNITUDES[lo] == a {
            (lo, lo)
        } else {
            (lo, lo + 1)
        }
    }

    /// Round-to-nearest-even with saturation at ±6.
    #[inline]
    pub fn round_nearest(v: f64) -> Self {
        let a = v.abs();
        let code = if a >= FP4_MAX {
            7
        } else {
            let (lo, hi) = Self::bracket_magnitude(a);
            let below = a - FP4_MAGNITUDES[lo];
            let above = FP4_MAGNITUDES[hi] - a;
            if below < above || (below == above && lo % 2 == 0) {
                lo
            } else {
                hi
            }
        };
        Self::with_sign(code, v < 0.0)
    }

    /// Stochastic rounding with uniform draw `u ∈ [0, 1)`. Magnitudes above 6
    /// are an overflow.
    #[inline]
    pub fn round_stochastic(v: f64, u: f64) -> Result<Self> {
        let a = v.abs();
        if a > FP4_MAX || a.is_nan() {
            return Err(Error::Overflow {
                value: v,
                min: -FP4_MAX,
                max: FP4_MAX,
            });
        }
        Ok(Self::round_stochastic_in_range(v, u))
    }

    /// [`Self::round_stochastic`] for callers that already guarantee
    /// `|v| <= 6` and `v` not NaN.
    #[inline(always)]
    pub(crate) fn round_stochastic_in_range(v: f64, u: f64) -> Self {
        let a = v.abs();
        let (lo, hi) = Self::bracket_magnitude(a);
        let code = if lo == hi {
            lo
        } else {
            let f = FP4_MAGNITUDES[lo];
            let c = FP4_MAGNITUDES[hi];
            // probability of rounding toward +inf, as the generic grid route
            // evaluates it on the signed bracket; gaps are powers of two, so
            // multiplying by the reciprocal is exact
            let inv_gap = FP4_INV_GAPS[lo];
            let p_up = if v < 0.0 { (c - a) * inv_gap } else { (a - f) * inv_gap };
            let rounds_up = u < p_up;
            if rounds_up != (v < 0.0) {
                hi
            } else {
                lo
            }
        };
        Self::with_sign(code, v < 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use proptest::prelude::*;

    #[test]
    fn fp4_max_normal_is_six() {
        assert_eq!(fp_value(0, 1, 3, &FpFormat::FP4_E2M1).unwrap(), 6.0);
        assert_eq!(FpFormat::FP4_E2M1.emax_elem(), 2);
        assert_eq!(FpFormat::FP4_E2M1.max_normal(), 6.0);
    }

    #[test]
    fn exponent_at_bias_is_one() {
        for fmt in FpFormat::TABLE {
            assert_eq!(fp_value(0, 0, fmt.exp_bias as u64, &fmt).unwrap(), 1.0, "{}", fmt.name);
        }
    }

    #[test]
    fn fp4_enumeration_matches_grid() {
        // oracle: all 16 codes through the generic value formula
        let mut seen = Vec::new();
        for s in 0..2 {
            for e in 0..4 {
                for m in 0..2 {
                    seen.push(fp_value(s, m, e, &FpFormat::FP4_E2M1).unwrap());
                }
            }
        }
        let mut mags: Vec<f64> = seen.iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        mags.dedup();
        assert_eq!(mags, FP4_MAGNITUDES.to_vec());
        assert_eq!(QuantGrid::from_format(&FpFormat::FP4_E2M1).unwrap(), QuantGrid::fp4());
    }

    #[test]
    fn known_max_normals() {
        assert_eq!(FpFormat::FP8_E4M3.max_normal(), 448.0);
        assert_eq!(FpFormat::FP8_E5M2.max_normal(), 57344.0);
        assert_eq!(FpFormat::FP16.max_normal(), 65504.0);
        assert_eq!(FpFormat::BF16.max_normal(), (2.0 - 2f64.powi(-7)) * 2f64.powi(127));
        assert_eq!(FpFormat::FP32.max_normal(), f32::MAX as f64);
        assert_eq!(FpFormat::FP64.max_normal(), f64::MAX);
        assert_eq!(FpFormat::FP64.min_subnormal(), f64::from_bits(1));
    }

    #[test]
    fn fp_value_rejects_wide_fields() {
        let fmt = FpFormat::FP4_E2M1;
        assert!(fp_value(0, 2, 0, &fmt).is_err());
        assert!(fp_value(0, 0, 4, &fmt).is_err());
        assert!(fp_value(2, 0, 0, &fmt).is_err());
    }

    #[test]
    fn fp8_grid_sizes() {
        // 256 codes minus two NaNs, with ±0 merged
        assert_eq!(QuantGrid::from_format(&FpFormat::FP8_E4M3).unwrap().values().len(), 253);
        // minus 2×4 Inf/NaN codes, ±0 merged
        assert_eq!(QuantGrid::from_format(&FpFormat::FP8_E5M2).unwrap().values().len(), 247);
    }

    #[test]
    fn grid_delta_is_widest_gap() {
        let g = QuantGrid::fp4();
        assert_eq!(g.delta(), 2.0);
        assert_eq!(g.values().len(), 15);
        assert!(QuantGrid::new(vec![0.0, 1.0]).is_err());
        assert!(QuantGrid::new(vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn nearest_examples() {
        let g = QuantGrid::fp4();
        assert_eq!(nearest_round(5.1, &g).unwrap(), 6.0);
        assert_eq!(nearest_round(3.0, &g).unwrap(), 3.0);
        assert_eq!(nearest_round(100.0, &g).unwrap(), 6.0);
        assert_eq!(nearest_round(-100.0, &g).unwrap(), -6.0);
        assert!(nearest_round(f64::NAN, &g).is_err());
        // ties: 0.75 → 1 (even index 2), 5 → 4 (index 6), 2.5 → 2 (index 4)
        assert_eq!(nearest_round(0.75, &g).unwrap(), 1.0);
        assert_eq!(nearest_round(5.0, &g).unwrap(), 4.0);
        assert_eq!(nearest_round(2.5, &g).unwrap(), 2.0);
        assert_eq!(nearest_round(-2.5, &g).unwrap(), -2.0);
        assert_eq!(nearest_round(0.25, &g).unwrap(), 0.0);
    }

    #[test]
    fn stochastic_edges() {
        let g = QuantGrid::fp4();
        let key = StreamKey::new(1, Domain::Dither);
        assert_eq!(stochastic_round(2.0, &g, &key).unwrap(), 2.0);
        assert!(matches!(stochastic_round(6.5, &g, &key), Err(Error::Overflow { .. })));
        assert_eq!(stochastic_round_with(5.0, &g, 0.49).unwrap(), 6.0);
        assert_eq!(stochastic_round_with(5.0, &g, 0.5).unwrap(), 4.0);
        assert_eq!(stochastic_round_with(2.25, &g, 0.2).unwrap(), 3.0);
        assert_eq!(stochastic_round_with(2.25, &g, 0.3).unwrap(), 2.0);
    }

    fn mc_frequency(x: f64, target: f64, n: u64) -> f64 {
        let g = QuantGrid::fp4();
        let base = StreamKey::new(99, Domain::Dither);
        (0..n)
            .filter(|&i| stochastic_round(x, &g, &base.at(0, i)).unwrap() == target)
            .count() as f64
            / n as f64
    }

    #[test]
    fn stochastic_bracket_probabilities() {
        let n = 200_000;
        let p = mc_frequency(2.25, 3.0, n);
        assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt(), "{p}");
        let p = mc_frequency(5.0, 6.0, n);
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn stochastic_mean_at_five() {
        let g = QuantGrid::fp4();
        let base = StreamKey::new(5, Domain::Dither);
        let n = 1_000_000u64;
        let mean = (0..n)
            .map(|i| stochastic_round(5.0, &g, &base.at(0, i)).unwrap())
            .sum::<f64>()
            / n as f64;
        // sd of a ±1 coin around 5
        assert!((mean - 5.0).abs() < 3.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn encode_decode_all_codes() {
        for bits in 0..16u8 {
            let code = Fp4Code::from_bits(bits).unwrap();
            let v = code.to_f64();
            assert_eq!(Fp4Code::encode(v).unwrap().to_f64(), v);
            assert_eq!(code.half_units() as f64, 2.0 * v);
        }
        assert_eq!(Fp4Code::from_bits(0b0111).unwrap().to_f64(), 6.0);
        assert_eq!(Fp4Code::from_bits(0b1000).unwrap().to_f64(), 0.0);
        assert_eq!(Fp4Code::encode(-0.0).unwrap(), Fp4Code::ZERO);
        assert!(Fp4Code::encode(2.5).is_err());
        assert!(Fp4Code::from_bits(16).is_err());
    }

    proptest! {
        #[test]
        fn fp4_nearest_agrees_with_grid(x in -8.0f64..8.0) {
            let g = QuantGrid::fp4();
            prop_assert_eq!(Fp4Code::round_nearest(x).to_f64(), nearest_round(x, &g).unwrap());
        }

        #[test]
        fn fp4_stochastic_agrees_with_grid(x in -6.0f64..=6.0, u in 0.0f64..1.0) {
            let g = QuantGrid::fp4();
            let grid_route = stochastic_round_with(x, &g, u).unwrap();
            let code_route = Fp4Code::round_stochastic(x, u).unwrap().to_f64();
            prop_assert_eq!(grid_route, code_route);
        }

        #[test]
        fn nearest_idempotent_and_monotone(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let g = QuantGrid::fp4();
            let nx = nearest_round(x, &g).unwrap();
            prop_assert_eq!(nearest_round(nx, &g).unwrap(), nx);
            let ny = nearest_round(y, &g).unwrap();
            if x <= y {
                prop_assert!(nx <= ny);
            }
        }

        #[test]
        fn stochastic_mirror_symmetry(x in -6.0f64..=6.0, u in 0.0f64..1.0) {
            let g = QuantGrid::fp4();
            if let Some((f, c)) = g.bracket(x) {
                if f != c {
                    let p = (x - f) / (c - f);
                    prop_assume!((u - p).abs() > 1e-9 && (1.0 - u - (1.0 - p)).abs() > 1e-9);
                }
            }
            let pos = stochastic_round_with(x, &g, u).unwrap();
            let neg = stochastic_round_with(-x, &g, 1.0 - u).unwrap();
            prop_assert_eq!(neg, -pos);
        }
    }
}
