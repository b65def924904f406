//! Fast invariant checks behind `mx4sim selftest`. Each check returns a short
//! detail string, as `Err` when the invariant is violated.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cli::Fault;
use crate::config::ExperimentConfig;
use crate::formats::{Fp4Code, QuantGrid, FP4_MAGNITUDES};
use crate::matrix::Matrix;
use crate::mx::{quantize_block_unbiased_with_stats, MxMatrix, MX_BLOCK};
use crate::qgemm::{linear_backward_parts, mxfp4_gemm, GemmMode, DEBIAS};
use crate::rht::{default_thresholds, hadamard, rht_apply, tail_bound_check, Axis, RhtKernel, RhtSpec};
use crate::rng::{uniform01, Domain, StreamKey};
use crate::tensor::TensorFile;
use crate::variancelab::sr_variance_oracle;

type Check = fn(u64, Option<Fault>) -> Result<String, String>;

pub const CHECKS: &[(&str, Check)] = &[
    ("fp4_grid", fp4_grid),
    ("scalar_sr_unbiased", scalar_sr_unbiased),
    ("block_quantizer_unbiased", block_quantizer_unbiased),
    ("reference_clipping_rate", reference_clipping_rate),
    ("hadamard_identities", hadamard_identities),
    ("rht_tail_bound", rht_tail_bound),
    ("sr_backward_unbiased", sr_backward_unbiased),
    ("thread_invariance", thread_invariance),
    ("tensor_file_roundtrip", tensor_file_roundtrip),
    ("config_roundtrip", config_roundtrip),
];

fn gaussian(rows: usize, cols: usize, key: &StreamKey) -> Matrix {
    let mut rng = key.rng();
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn fp4_grid(_: u64, _: Option<Fault>) -> Result<String, String> {
    for bits in 0u8..16 {
        let v = Fp4Code::from_bits(bits).map_err(|e| e.to_string())?.to_f64();
        let expect = FP4_MAGNITUDES[(bits & 7) as usize] * if bits & 8 != 0 { -1.0 } else { 1.0 };
        if v != expect {
            return Err(format!("code {bits:04b} decodes to {v}, expected {expect}"));
        }
    }
    Ok("16 codes decode to ±{0, 0.5, 1, 1.5, 2, 3, 4, 6}".into())
}

fn scalar_sr_unbiased(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let grid = QuantGrid::fp4();
    let key = StreamKey::new(seed, Domain::Dither).derive(1);
    let mut rng = StreamKey::new(seed, Domain::Data).derive(1).rng();
    let n = 20_000u64;
    for p in 0..10u64 {
        let x: f64 = rng.gen_range(-6.0..6.0);
        let (mut s, mut s2) = (0.0, 0.0);
        for d in 0..n {
            let u = uniform01(&key.at(0, p).at(1, d));
            let q = Fp4Code::round_stochastic(x, u).map_err(|e| e.to_string())?.to_f64();
            s += q;
            s2 += q * q;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let oracle = sr_variance_oracle(x, &grid).map_err(|e| e.to_string())?;
        if (mean - x).abs() > 4.0 * (oracle / n as f64).sqrt() + 1e-12 {
            return Err(format!("x = {x}: mean {mean}"));
        }
        // the variance of a two-point draw is known exactly, so bound its sampling error crudely
        if (var - oracle).abs() > 0.05 * oracle + 1e-3 {
            return Err(format!("x = {x}: variance {var}, closed form {oracle}"));
        }
    }
    Ok(format!("10 points x {n} draws"))
}

fn block_quantizer_unbiased(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let data = StreamKey::new(seed, Domain::Data).derive(2);
    let dither = StreamKey::new(seed, Domain::Dither).derive(2);
    let n = 20_000u64;
    for blk in 0..3u64 {
        let mut v = [0.0; MX_BLOCK];
        let mut rng = data.at(0, blk).rng();
        v.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        if blk == 2 {
            v[7] = 1e3;
        }
        let mut sum = [0.0; MX_BLOCK];
        let mut sum2 = [0.0; MX_BLOCK];
        for d in 0..n {
            let (b, stats) =
                quantize_block_unbiased_with_stats(&v, &dither.at(0, blk).at(1, d)).map_err(|e| e.to_string())?;
            if stats.overflow_events != 0 {
                return Err(format!("block {blk}: overflow event"));
            }
            for (i, q) in b.dequantize().iter().enumerate() {
                sum[i] += q;
                sum2[i] += q * q;
            }
        }
        for i in 0..MX_BLOCK {
            let mean = sum[i] / n as f64;
            let sd = (sum2[i] / n as f64 - mean * mean).max(0.0).sqrt();
            if (mean - 0.75 * v[i]).abs() > 4.0 * sd / (n as f64).sqrt() + 1e-12 {
                return Err(format!("block {blk} entry {i}: mean {mean}, expected {}", 0.75 * v[i]));
            }
        }
    }
    Ok(format!("3 blocks x {n} draws, mean = 3/4 V, no overflow"))
}

fn reference_clipping_rate(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let m = gaussian(1 << 13, 32, &StreamKey::new(seed, Domain::Data).derive(3));
    let (_, stats) = MxMatrix::quantize_reference(&m).map_err(|e| e.to_string())?;
    let f = stats.clipped_fraction();
    if (0.015..=0.05).contains(&f) {
        Ok(format!("clipped fraction {f:.4}"))
    } else {
        Err(format!("clipped fraction {f:.4} outside [0.015, 0.05]"))
    }
}

fn hadamard_identities(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let h = hadamard(64).map_err(|e| e.to_string())?;
    let hh = h
        .entries()
        .matmul(&h.entries().transpose())
        .map_err(|e| e.to_string())?;
    let mut dev = hh;
    for i in 0..64 {
        dev[(i, i)] -= 1.0;
    }
    let err = dev.max_abs();
    if err > 1e-6 {
        return Err(format!("H·Hᵀ deviates from I by {err:e}"));
    }
    let x = gaussian(4, 256, &StreamKey::new(seed, Domain::Data).derive(4));
    let spec = RhtSpec::new(64, StreamKey::new(seed, Domain::Sign)).map_err(|e| e.to_string())?;
    let dense = rht_apply(&x, Axis::Rows, &spec).map_err(|e| e.to_string())?;
    let fast = rht_apply(&x, Axis::Rows, &spec.with_kernel(RhtKernel::Fast)).map_err(|e| e.to_string())?;
    if fast.rel_frobenius_error(&dense) > 1e-12 {
        return Err("fast and dense transforms disagree".into());
    }
    let a = gaussian(64, 256, &StreamKey::new(seed, Domain::Data).derive(5));
    let b = gaussian(256, 64, &StreamKey::new(seed, Domain::Data).derive(6));
    let key = StreamKey::new(seed, Domain::Dither);
    let plain = mxfp4_gemm(&a, &b, &GemmMode::EXACT, &key).map_err(|e| e.to_string())?;
    let rotated = mxfp4_gemm(&a, &b, &GemmMode::EXACT.with_rht(64), &key).map_err(|e| e.to_string())?;
    let rel = rotated.rel_frobenius_error(&plain);
    if rel > 1e-4 {
        return Err(format!("RHT changes the exact product by {rel:e}"));
    }
    Ok(format!("orthonormal, cancellation error {rel:.1e}"))
}

fn rht_tail_bound(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let mut x = vec![0.0; 64];
    let mut rng = StreamKey::new(seed, Domain::Data).derive(7).rng();
    x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    x[3] = 40.0;
    let table = tail_bound_check(
        &x,
        &default_thresholds(&x),
        2_000,
        &StreamKey::new(seed, Domain::Sign).derive(7),
    )
    .map_err(|e| e.to_string())?;
    if table.holds() {
        Ok("empirical exceedance within the union bound".into())
    } else {
        Err("empirical exceedance above the union bound".into())
    }
}

/// Regresses the Monte-Carlo mean of the corrected gradients on the exact
/// ones; an unbiased estimator has slope 1.
fn sr_backward_unbiased(seed: u64, fault: Option<Fault>) -> Result<String, String> {
    let data = StreamKey::new(seed, Domain::Data).derive(8);
    let dldy = gaussian(64, 64, &data.at(0, 0));
    let x = gaussian(64, 64, &data.at(0, 1));
    let w = gaussian(64, 64, &data.at(0, 2));
    let correction = if fault == Some(Fault::Debias) { 1.0 } else { DEBIAS };
    let n = 300u64;
    let (ex, ew) =
        linear_backward_parts(&dldy, &x, &w, &GemmMode::EXACT, &data, true, 1.0).map_err(|e| e.to_string())?;
    let exact: Vec<f64> = ex
        .expect("requested")
        .into_vec()
        .into_iter()
        .chain(ew.into_vec())
        .collect();
    let mut out = Vec::new();
    for mode in [GemmMode::stochastic(), GemmMode::stochastic().with_rht(64)] {
        let mut sum = vec![0.0; exact.len()];
        let mut sum2 = vec![0.0; exact.len()];
        for d in 0..n {
            let key = StreamKey::new(seed, Domain::Dither).derive(8).at(0, d);
            let (gx, gw) =
                linear_backward_parts(&dldy, &x, &w, &mode, &key, true, correction).map_err(|e| e.to_string())?;
            for (i, v) in gx
                .expect("requested")
                .as_slice()
                .iter()
                .chain(gw.as_slice())
                .enumerate()
            {
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        let nf = n as f64;
        let (mut num, mut den, mut var) = (0.0, 0.0, 0.0);
        for i in 0..exact.len() {
            let mean = sum[i] / nf;
            let var_mean = (sum2[i] / nf - mean * mean).max(0.0) / (nf - 1.0);
            num += exact[i] * mean;
            den += exact[i] * exact[i];
            var += exact[i] * exact[i] * var_mean;
        }
        let slope = num / den;
        let z = (slope - 1.0) / (var.sqrt() / den);
        if z.abs() > 5.0 {
            return Err(format!(
                "rht={}: mean gradient is {slope:.4} x exact (z = {z:.1}); the 16/9 correction is wrong",
                mode.use_rht
            ));
        }
        out.push(format!("rht={} slope {slope:.4}", mode.use_rht));
    }
    Ok(out.join(", "))
}

fn thread_invariance(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let a = gaussian(64, 128, &StreamKey::new(seed, Domain::Data).derive(9));
    let b = gaussian(128, 64, &StreamKey::new(seed, Domain::Data).derive(10));
    let key = StreamKey::new(seed, Domain::Dither).derive(9);
    let mode = GemmMode::stochastic().with_rht(64);
    let run = |threads| -> Result<Matrix, String> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?
            .install(|| mxfp4_gemm(&a, &b, &mode, &key))
            .map_err(|e| e.to_string())
    };
    if run(1)? == run(3)? {
        Ok("1 and 3 workers agree bit-for-bit".into())
    } else {
        Err("results depend on the worker count".into())
    }
}

fn tensor_file_roundtrip(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let m = gaussian(2, 64, &StreamKey::new(seed, Domain::Data).derive(11));
    let (q, _) = MxMatrix::quantize_unbiased(&m, &StreamKey::new(seed, Domain::Dither)).map_err(|e| e.to_string())?;
    let here = std::path::Path::new("<memory>");
    for t in [
        TensorFile::f64(vec![2, 64], m.as_slice().to_vec()),
        TensorFile::f32(vec![2, 64], m.as_slice().iter().map(|&v| v as f32).collect()),
        TensorFile::mxfp4(vec![2, 64], q),
    ] {
        let t = t.map_err(|e| e.to_string())?;
        let bytes = t.to_bytes();
        let back = TensorFile::from_bytes(&bytes, here).map_err(|e| e.to_string())?;
        if back.to_bytes() != bytes {
            return Err(format!("{:?} payload changed on round trip", t.dtype()));
        }
    }
    Ok("FP32, FP64 and MXFP4 bit-exact".into())
}

fn config_roundtrip(seed: u64, _: Option<Fault>) -> Result<String, String> {
    let cfg = ExperimentConfig {
        seed,
        ..Default::default()
    };
    let text = cfg.to_toml().map_err(|e| e.to_string())?;
    match ExperimentConfig::from_toml(&text) {
        Ok(back) if back == cfg => Ok("default config survives TOML".into()),
        Ok(_) => Err("config changed on round trip".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for (name, check) in CHECKS {
            assert!(check(0, None).is_ok(), "{name}: {:?}", check(0, None));
        }
    }

    #[test]
    fn missing_correction_is_caught() {
        let err = sr_backward_unbiased(0, Some(Fault::Debias)).unwrap_err();
        assert!(err.contains("16/9"), "{err}");
    }
}
