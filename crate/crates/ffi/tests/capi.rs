use std::ffi::{c_char, CStr, CString};
use std::ptr;

use mx4sim_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        mx4_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn ramp(rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|i| ((i * 37 % 101) as f64 - 50.0) / 8.0).collect()
}

#[test]
fn decodes_all_codes() {
    let expect: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    for code in 0u8..16 {
        let mut v = f64::NAN;
        assert_eq!(unsafe { mx4_fp4_decode(code, &mut v) }, Mx4Status::Ok);
        let mag = expect[(code & 7) as usize];
        assert_eq!(v, if code & 8 != 0 { -mag } else { mag });
    }
    let mut v = 0.0;
    assert_eq!(unsafe { mx4_fp4_decode(16, &mut v) }, Mx4Status::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { mx4_fp4_decode(1, ptr::null_mut()) }, Mx4Status::NullPointer);
}

#[test]
fn quantize_dequantize_roundtrip() {
    let (rows, cols) = (3, 64);
    let data = ramp(rows, cols);
    let mut h: *mut Mx4Matrix = ptr::null_mut();
    unsafe {
        assert_eq!(
            mx4_quantize(data.as_ptr(), rows, cols, Mx4Algorithm::Reference, 0, &mut h),
            Mx4Status::Ok
        );
        assert_eq!(mx4_matrix_rows(h), rows);
        assert_eq!(mx4_matrix_cols(h), cols);
        let clipped = mx4_matrix_clipped_fraction(h);
        assert!((0.0..=1.0).contains(&clipped));

        let mut out = vec![0.0; rows * cols];
        assert_eq!(mx4_matrix_dequantize(h, out.as_mut_ptr(), out.len()), Mx4Status::Ok);
        let m = mx4sim::Matrix::from_vec(rows, cols, data.clone()).unwrap();
        let (q, _) = mx4sim::mx::MxMatrix::quantize_reference(&m).unwrap();
        assert_eq!(out, q.dequantize().into_vec());

        let mut exps = vec![0i8; rows * cols / 32];
        assert_eq!(mx4_matrix_scale_exps(h, exps.as_mut_ptr(), exps.len()), Mx4Status::Ok);
        // max |x| is 6.25, so every block has scale 2^(2 - 2)
        assert!(exps.iter().all(|&e| e == 0), "{exps:?}");

        assert_eq!(mx4_matrix_dequantize(h, out.as_mut_ptr(), 5), Mx4Status::ShapeMismatch);
        mx4_matrix_free(h);
    }
}

#[test]
fn rejects_bad_input() {
    let mut h: *mut Mx4Matrix = ptr::null_mut();
    let data = ramp(2, 33);
    unsafe {
        assert_eq!(
            mx4_quantize(data.as_ptr(), 2, 33, Mx4Algorithm::Reference, 0, &mut h),
            Mx4Status::ShapeMismatch
        );
        assert!(h.is_null());
        let mut nan = ramp(1, 32);
        nan[7] = f64::NAN;
        assert_eq!(
            mx4_quantize(nan.as_ptr(), 1, 32, Mx4Algorithm::Unbiased, 0, &mut h),
            Mx4Status::NonFinite
        );
        assert!(last_error().contains("index 7"), "{}", last_error());
        assert_eq!(
            mx4_quantize(ptr::null(), 1, 32, Mx4Algorithm::Unbiased, 0, &mut h),
            Mx4Status::NullPointer
        );
        mx4_matrix_free(ptr::null_mut());
    }
}

#[test]
fn unbiased_quantize_is_seeded() {
    let data = ramp(4, 32);
    let run = |seed| unsafe {
        let mut h: *mut Mx4Matrix = ptr::null_mut();
        assert_eq!(
            mx4_quantize(data.as_ptr(), 4, 32, Mx4Algorithm::Unbiased, seed, &mut h),
            Mx4Status::Ok
        );
        let mut out = vec![0.0; 128];
        assert_eq!(mx4_matrix_dequantize(h, out.as_mut_ptr(), out.len()), Mx4Status::Ok);
        mx4_matrix_free(h);
        out
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn tensor_file_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.mx4").to_str().unwrap()).unwrap();
    let data = ramp(2, 96);
    unsafe {
        let mut h: *mut Mx4Matrix = ptr::null_mut();
        assert_eq!(
            mx4_quantize(data.as_ptr(), 2, 96, Mx4Algorithm::Unbiased, 9, &mut h),
            Mx4Status::Ok
        );
        assert_eq!(mx4_matrix_write(h, path.as_ptr()), Mx4Status::Ok);
        let mut back: *mut Mx4Matrix = ptr::null_mut();
        assert_eq!(mx4_matrix_read(path.as_ptr(), &mut back), Mx4Status::Ok);
        let mut a = vec![0.0; 192];
        let mut b = vec![1.0; 192];
        mx4_matrix_dequantize(h, a.as_mut_ptr(), 192);
        mx4_matrix_dequantize(back, b.as_mut_ptr(), 192);
        assert_eq!(a, b);
        mx4_matrix_free(h);
        mx4_matrix_free(back);

        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(mx4_matrix_read(missing.as_ptr(), &mut back), Mx4Status::BadTensorFile);
        assert!(back.is_null());
    }
}

#[test]
fn gemm_modes() {
    let (m, k, n) = (4, 64, 3);
    let a = ramp(m, k);
    let b: Vec<f64> = ramp(k, n).iter().map(|v| v * 0.5).collect();
    let mut exact = vec![0.0; m * n];
    let mut nearest = vec![0.0; m * n];
    unsafe {
        assert_eq!(
            mx4_gemm(
                a.as_ptr(),
                b.as_ptr(),
                m,
                k,
                n,
                Mx4Rounding::Exact,
                0,
                0,
                exact.as_mut_ptr()
            ),
            Mx4Status::Ok
        );
        assert_eq!(
            mx4_gemm(
                a.as_ptr(),
                b.as_ptr(),
                m,
                k,
                n,
                Mx4Rounding::Nearest,
                32,
                0,
                nearest.as_mut_ptr()
            ),
            Mx4Status::Ok
        );
    }
    for i in 0..m {
        for j in 0..n {
            let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
            assert!((exact[i * n + j] - want).abs() < 1e-9);
        }
    }
    let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(nearest.iter().zip(&exact).all(|(q, e)| (q - e).abs() < 0.5 * scale));

    // averaged corrected stochastic products approach the exact one
    let draws = 400;
    let mut mean = vec![0.0; m * n];
    let mut c = vec![0.0; m * n];
    for s in 0..draws {
        unsafe {
            assert_eq!(
                mx4_gemm(
                    a.as_ptr(),
                    b.as_ptr(),
                    m,
                    k,
                    n,
                    Mx4Rounding::Stochastic,
                    0,
                    s,
                    c.as_mut_ptr()
                ),
                Mx4Status::Ok
            );
        }
        mean.iter_mut().zip(&c).for_each(|(acc, v)| *acc += v / draws as f64);
    }
    let err = mean
        .iter()
        .zip(&exact)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = exact.iter().map(|y| y * y).sum::<f64>().sqrt();
    assert!(err / norm < 0.02, "relative error {}", err / norm);

    unsafe {
        assert_ne!(
            mx4_gemm(
                a.as_ptr(),
                b.as_ptr(),
                m,
                k,
                n,
                Mx4Rounding::Nearest,
                48,
                0,
                c.as_mut_ptr()
            ),
            Mx4Status::Ok
        );
        assert!(last_error().contains("48"), "{}", last_error());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mx4_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
