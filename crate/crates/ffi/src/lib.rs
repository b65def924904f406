//! C ABI over the MXFP4 emulator.
//!
//! Every fallible call returns an [`Mx4Status`]. On failure a message is kept
//! per thread and can be copied out with [`mx4_last_error`]. Quantized
//! matrices cross the boundary as opaque [`Mx4Matrix`] handles owned by the
//! caller and released with [`mx4_matrix_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mx4sim::formats::Fp4Code;
use mx4sim::mx::{MxAlgorithm, MxMatrix, QuantStats};
use mx4sim::qgemm::{mxfp4_gemm, GemmMode, Rounding};
use mx4sim::rng::{Domain, StreamKey};
use mx4sim::tensor::{TensorData, TensorFile};
use mx4sim::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mx4Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Overflow = 5,
    Io = 6,
    BadTensorFile = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mx4Algorithm {
    /// Round to nearest with saturation.
    Reference = 0,
    /// 3/4 prescale and stochastic rounding.
    Unbiased = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mx4Rounding {
    Exact = 0,
    Nearest = 1,
    Stochastic = 2,
}

/// A quantized matrix and the statistics gathered while quantizing it.
pub struct Mx4Matrix {
    inner: MxMatrix,
    stats: QuantStats,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> Mx4Status {
    match e {
        Error::Argument(_) | Error::Config(_) | Error::Diverged { .. } => Mx4Status::InvalidArgument,
        Error::Overflow { .. } => Mx4Status::Overflow,
        Error::Shape(_) => Mx4Status::ShapeMismatch,
        Error::NonFinite { .. } => Mx4Status::NonFinite,
        Error::TensorFile { .. } | Error::Json(_) => Mx4Status::BadTensorFile,
        Error::Io(_) => Mx4Status::Io,
    }
}

/// Runs `f`, records any error or panic and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Mx4Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Mx4Status::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            Mx4Status::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".to_owned());
            Mx4Status::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Error::Argument(format!("{rows}x{cols} overflows usize")).into())
}

/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, Failure> {
    let n = checked_len(rows, cols)?;
    let p = non_null(data, what)?;
    let values = if n == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(p, n).to_vec()
    };
    Ok(Matrix::from_vec(rows, cols, values)?)
}

/// # Safety
/// `path` must be a NUL-terminated string.
unsafe fn read_path<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    let p = non_null(path, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, excluding
/// the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mx4_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mx4_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Decodes a 4-bit E2M1 code; `code` must be below 16.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn mx4_fp4_decode(code: u8, out: *mut f64) -> Mx4Status {
    guard(|| {
        let out = non_null(out, "out")?.cast_mut();
        *out = Fp4Code::from_bits(code)?.to_f64();
        Ok(())
    })
}

/// Quantizes a row-major `rows x cols` matrix into 32-wide blocks along each
/// row. `cols` must be a multiple of 32. `seed` drives the stochastic rounding
/// of the unbiased algorithm and is ignored by the reference one.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mx4_quantize(
    data: *const f64,
    rows: usize,
    cols: usize,
    algorithm: Mx4Algorithm,
    seed: u64,
    out: *mut *mut Mx4Matrix,
) -> Mx4Status {
    guard(|| {
        let out = non_null(out, "out")?.cast_mut();
        *out = std::ptr::null_mut();
        let m = read_matrix(data, rows, cols, "data")?;
        let algo = match algorithm {
            Mx4Algorithm::Reference => MxAlgorithm::Reference,
            Mx4Algorithm::Unbiased => MxAlgorithm::Unbiased,
        };
        let (inner, stats) = MxMatrix::quantize(&m, algo, &StreamKey::new(seed, Domain::Dither))?;
        *out = Box::into_raw(Box::new(Mx4Matrix { inner, stats }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_free(m: *mut Mx4Matrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_rows(m: *const Mx4Matrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_cols(m: *const Mx4Matrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Fraction of entries whose scaled magnitude exceeded 6 before rounding.
/// Zero for handles read from a file.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_clipped_fraction(m: *const Mx4Matrix) -> f64 {
    m.as_ref().map_or(0.0, |m| m.stats.clipped_fraction())
}

/// Writes the dequantized matrix, row-major, into `out` (`len` doubles, at
/// least rows * cols).
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_dequantize(m: *const Mx4Matrix, out: *mut f64, len: usize) -> Mx4Status {
    guard(|| {
        let m = &*non_null(m, "matrix")?;
        let out = non_null(out, "out")?.cast_mut();
        let d = m.inner.dequantize();
        let need = d.as_slice().len();
        if len < need {
            return Err(Error::Shape(format!("output holds {len} values, {need} needed")).into());
        }
        std::ptr::copy_nonoverlapping(d.as_slice().as_ptr(), out, need);
        Ok(())
    })
}

/// Copies the shared exponent of every block, row-major, into `out`
/// (`len` entries, at least rows * cols / 32).
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_scale_exps(m: *const Mx4Matrix, out: *mut i8, len: usize) -> Mx4Status {
    guard(|| {
        let m = &*non_null(m, "matrix")?;
        let out = non_null(out, "out")?.cast_mut();
        let blocks = m.inner.blocks();
        if len < blocks.len() {
            return Err(Error::Shape(format!("output holds {len} values, {} needed", blocks.len())).into());
        }
        for (i, b) in blocks.iter().enumerate() {
            *out.add(i) = b.scale_exp;
        }
        Ok(())
    })
}

/// Saves the handle as an MXFP4 tensor file.
///
/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_write(m: *const Mx4Matrix, path: *const c_char) -> Mx4Status {
    guard(|| {
        let m = &*non_null(m, "matrix")?;
        let path = read_path(path)?;
        let dims = vec![m.inner.rows() as u64, m.inner.cols() as u64];
        TensorFile::mxfp4(dims, m.inner.clone())?.write(path)?;
        Ok(())
    })
}

/// Loads an MXFP4 tensor file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mx4_matrix_read(path: *const c_char, out: *mut *mut Mx4Matrix) -> Mx4Status {
    guard(|| {
        let out = non_null(out, "out")?.cast_mut();
        *out = std::ptr::null_mut();
        let path = read_path(path)?;
        let inner = match TensorFile::read(path)?.data {
            TensorData::Mxfp4(m) => m,
            _ => {
                return Err(Error::TensorFile {
                    path: path.to_owned(),
                    reason: "not an MXFP4 tensor".into(),
                }
                .into())
            }
        };
        *out = Box::into_raw(Box::new(Mx4Matrix {
            inner,
            stats: QuantStats::default(),
        }));
        Ok(())
    })
}

/// Emulated product `out = a · b` with `a` of shape `m x k` and `b` of shape
/// `k x n`, both row-major. Operands are quantized along `k`, which must be a
/// multiple of 32 unless `rounding` is exact. A nonzero `rht_g` applies a
/// blockwise random Hadamard transform of that size along `k` first.
/// Stochastic products are rescaled by 16/9 so they are unbiased.
///
/// # Safety
/// `a`, `b` and `out` must point to `m*k`, `k*n` and `m*n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mx4_gemm(
    a: *const f64,
    b: *const f64,
    m: usize,
    k: usize,
    n: usize,
    rounding: Mx4Rounding,
    rht_g: usize,
    seed: u64,
    out: *mut f64,
) -> Mx4Status {
    guard(|| {
        let out = non_null(out, "out")?.cast_mut();
        let a = read_matrix(a, m, k, "a")?;
        let b = read_matrix(b, k, n, "b")?;
        let mut mode = GemmMode::new(match rounding {
            Mx4Rounding::Exact => Rounding::Exact,
            Mx4Rounding::Nearest => Rounding::Nearest,
            Mx4Rounding::Stochastic => Rounding::Stochastic,
        });
        if rht_g > 0 {
            mode = mode.with_rht(rht_g);
        }
        let c = mxfp4_gemm(&a, &b, &mode, &StreamKey::new(seed, Domain::Dither))?.scaled(mode.output_correction());
        let n_out = checked_len(m, n)?;
        if n_out > 0 {
            std::ptr::copy_nonoverlapping(c.as_slice().as_ptr(), out, n_out);
        }
        Ok(())
    })
}
