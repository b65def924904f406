#ifndef MX4SIM_H
#define MX4SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  /**
   * Round to nearest with saturation.
   */
  MX4_ALGORITHM_REFERENCE = 0,
  /**
   * 3/4 prescale and stochastic rounding.
   */
  MX4_ALGORITHM_UNBIASED = 1,
} Mx4Algorithm;

typedef enum {
  MX4_ROUNDING_EXACT = 0,
  MX4_ROUNDING_NEAREST = 1,
  MX4_ROUNDING_STOCHASTIC = 2,
} Mx4Rounding;

typedef enum {
  MX4_STATUS_OK = 0,
  MX4_STATUS_NULL_POINTER = 1,
  MX4_STATUS_INVALID_ARGUMENT = 2,
  MX4_STATUS_SHAPE_MISMATCH = 3,
  MX4_STATUS_NON_FINITE = 4,
  MX4_STATUS_OVERFLOW = 5,
  MX4_STATUS_IO = 6,
  MX4_STATUS_BAD_TENSOR_FILE = 7,
  MX4_STATUS_PANIC = 8,
} Mx4Status;

/**
 * A quantized matrix and the statistics gathered while quantizing it.
 */
typedef struct Mx4Matrix Mx4Matrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, excluding
 * the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mx4_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mx4_version(void);

/**
 * Decodes a 4-bit E2M1 code; `code` must be below 16.
 *
 * # Safety
 * `out` must point to a writable double.
 */
Mx4Status mx4_fp4_decode(uint8_t code, double *out);

/**
 * Quantizes a row-major `rows x cols` matrix into 32-wide blocks along each
 * row. `cols` must be a multiple of 32. `seed` drives the stochastic rounding
 * of the unbiased algorithm and is ignored by the reference one.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles and `out` to a
 * writable handle slot.
 */
Mx4Status mx4_quantize(const double *data,
                       size_t rows,
                       size_t cols,
                       Mx4Algorithm algorithm,
                       uint64_t seed,
                       Mx4Matrix **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void mx4_matrix_free(Mx4Matrix *m);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t mx4_matrix_rows(const Mx4Matrix *m);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t mx4_matrix_cols(const Mx4Matrix *m);

/**
 * Fraction of entries whose scaled magnitude exceeded 6 before rounding.
 * Zero for handles read from a file.
 *
 * # Safety
 * `m` must be a live handle.
 */
double mx4_matrix_clipped_fraction(const Mx4Matrix *m);

/**
 * Writes the dequantized matrix, row-major, into `out` (`len` doubles, at
 * least rows * cols).
 *
 * # Safety
 * `m` must be a live handle and `out` must point to `len` writable doubles.
 */
Mx4Status mx4_matrix_dequantize(const Mx4Matrix *m, double *out, size_t len);

/**
 * Copies the shared exponent of every block, row-major, into `out`
 * (`len` entries, at least rows * cols / 32).
 *
 * # Safety
 * `m` must be a live handle and `out` must point to `len` writable bytes.
 */
Mx4Status mx4_matrix_scale_exps(const Mx4Matrix *m, int8_t *out, size_t len);

/**
 * Saves the handle as an MXFP4 tensor file.
 *
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
Mx4Status mx4_matrix_write(const Mx4Matrix *m, const char *path);

/**
 * Loads an MXFP4 tensor file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
Mx4Status mx4_matrix_read(const char *path, Mx4Matrix **out);

/**
 * Emulated product `out = a · b` with `a` of shape `m x k` and `b` of shape
 * `k x n`, both row-major. Operands are quantized along `k`, which must be a
 * multiple of 32 unless `rounding` is exact. A nonzero `rht_g` applies a
 * blockwise random Hadamard transform of that size along `k` first.
 * Stochastic products are rescaled by 16/9 so they are unbiased.
 *
 * # Safety
 * `a`, `b` and `out` must point to `m*k`, `k*n` and `m*n` doubles.
 */
Mx4Status mx4_gemm(const double *a,
                   const double *b,
                   size_t m,
                   size_t k,
                   size_t n,
                   Mx4Rounding rounding,
                   size_t rht_g,
                   uint64_t seed,
                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MX4SIM_H */
