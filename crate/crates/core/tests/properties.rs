//! Property tests for the transform, key and GEMM modules.

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use mx4sim::qgemm::{exact_gemm, mxfp4_gemm, GemmMode, Rounding};
use mx4sim::rht::{rht_apply, Axis, RhtKernel, RhtSpec};
use mx4sim::rng::{sign_vector, uniform01, Domain, StreamKey};
use mx4sim::Matrix;

fn gaussian(rows: usize, cols: usize, key: &StreamKey) -> Matrix {
    let mut rng = key.rng();
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn pow2_in(lo: u32, hi: u32) -> impl Strategy<Value = usize> {
    (lo..=hi).prop_map(|e| 1usize << e)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rht_inverse_roundtrips_and_preserves_norms(
        g in pow2_in(5, 8), segments in 1usize..4, rows in 1usize..4, seed: u64, fast: bool,
    ) {
        let m = gaussian(rows, g * segments, &StreamKey::new(seed, Domain::Data));
        let kernel = if fast { RhtKernel::Fast } else { RhtKernel::Dense };
        let spec = RhtSpec::new(g, StreamKey::new(seed, Domain::Sign)).unwrap().with_kernel(kernel);
        let t = rht_apply(&m, Axis::Rows, &spec).unwrap();
        for r in 0..rows {
            let n0: f64 = m.row(r).iter().map(|v| v * v).sum();
            let n1: f64 = t.row(r).iter().map(|v| v * v).sum();
            prop_assert!((n0 - n1).abs() <= 1e-10 * n0.max(1.0));
        }
        let back = rht_apply(&t, Axis::Rows, &spec.inverse()).unwrap();
        prop_assert!(back.rel_frobenius_error(&m) < 1e-12);
    }

    #[test]
    fn dense_and_fast_kernels_agree(g in pow2_in(5, 9), seed: u64) {
        let m = gaussian(3, 2 * g, &StreamKey::new(seed, Domain::Data));
        let spec = RhtSpec::new(g, StreamKey::new(seed, Domain::Sign)).unwrap();
        let dense = rht_apply(&m, Axis::Cols, &spec.with_kernel(RhtKernel::Dense));
        prop_assert!(dense.is_err() || m.rows().is_multiple_of(g));
        let dense = rht_apply(&m, Axis::Rows, &spec.with_kernel(RhtKernel::Dense)).unwrap();
        let fast = rht_apply(&m, Axis::Rows, &spec.with_kernel(RhtKernel::Fast)).unwrap();
        prop_assert!(fast.rel_frobenius_error(&dense) < 1e-12);
    }

    #[test]
    fn draws_are_pure_functions_of_the_key(seed: u64, c in prop::array::uniform4(any::<u64>()), g in 1usize..300) {
        let key = StreamKey::new(seed, Domain::Dither).with_coords(c);
        let u = uniform01(&key);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u.to_bits(), uniform01(&key).to_bits());
        prop_assert_ne!(key.hash64(), key.in_domain(Domain::Sign).hash64());
        let s = sign_vector(&key, g);
        prop_assert_eq!(s.len(), g);
        prop_assert!(s.iter().all(|&v| v == 1.0 || v == -1.0));
        prop_assert_eq!(&s, &sign_vector(&key, g));
    }

    #[test]
    fn exact_mode_matches_matmul_with_or_without_rht(
        m in 1usize..6, kb in 1usize..4, n in 1usize..6, seed: u64,
    ) {
        let k = 32 * kb;
        let a = gaussian(m, k, &StreamKey::new(seed, Domain::Data).derive(0));
        let b = gaussian(k, n, &StreamKey::new(seed, Domain::Data).derive(1));
        let exact = exact_gemm(&a, &b).unwrap();
        let key = StreamKey::new(seed, Domain::Dither);
        let plain = mxfp4_gemm(&a, &b, &GemmMode::EXACT, &key).unwrap();
        let rht = mxfp4_gemm(&a, &b, &GemmMode::EXACT.with_rht(32), &key).unwrap();
        prop_assert!(plain.rel_frobenius_error(&exact) < 1e-12);
        prop_assert!(rht.rel_frobenius_error(&exact) < 1e-10);
    }

    #[test]
    fn quantized_gemm_scales_by_powers_of_two(e in -20i32..20, seed: u64, stochastic: bool) {
        let a = gaussian(4, 64, &StreamKey::new(seed, Domain::Data).derive(0));
        let b = gaussian(64, 3, &StreamKey::new(seed, Domain::Data).derive(1));
        let mode = if stochastic { GemmMode::stochastic() } else { GemmMode::nearest() };
        let key = StreamKey::new(seed, Domain::Dither);
        let base = mxfp4_gemm(&a, &b, &mode, &key).unwrap();
        let scaled = mxfp4_gemm(&a.clone().scaled(2f64.powi(e)), &b, &mode, &key).unwrap();
        prop_assert_eq!(scaled, base.scaled(2f64.powi(e)));
    }
}

#[test]
fn exact_and_nearest_rounding_are_deterministic() {
    let a = gaussian(8, 64, &StreamKey::new(24, Domain::Data).derive(0));
    let b = gaussian(64, 8, &StreamKey::new(24, Domain::Data).derive(1));
    for r in [Rounding::Nearest, Rounding::Exact] {
        let mode = GemmMode::new(r);
        let x = mxfp4_gemm(&a, &b, &mode, &StreamKey::new(1, Domain::Dither)).unwrap();
        let y = mxfp4_gemm(&a, &b, &mode, &StreamKey::new(2, Domain::Dither)).unwrap();
        assert_eq!(x, y);
    }
}
