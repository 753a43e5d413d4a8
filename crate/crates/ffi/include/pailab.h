#ifndef PAILAB_H
#define PAILAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PaiStatus {
  PAI_STATUS_OK = 0,
  PAI_STATUS_INVALID_ARGUMENT = 1,
  PAI_STATUS_DOMAIN = 2,
  PAI_STATUS_UNSUPPORTED = 3,
  PAI_STATUS_BUDGET = 4,
  PAI_STATUS_NUMERIC = 5,
  PAI_STATUS_FORMAT = 6,
  PAI_STATUS_IO = 7,
  PAI_STATUS_EMPTY_DATASET = 8,
  PAI_STATUS_UNDEFINED_CORRELATION = 9,
  PAI_STATUS_INSUFFICIENT_CORE = 10,
  PAI_STATUS_CONTRACT = 11,
  PAI_STATUS_NULL_POINTER = 12,
  PAI_STATUS_PANIC = 13,
} PaiStatus;

/**
 * Opaque `G × G` kernel.
 */
typedef struct PaiGridKernel PaiGridKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pai_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * in bytes excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pai_last_error_message(char *buf, size_t len);

double pai_erf(double x);

/**
 * # Safety
 * `out` must be valid for one write.
 */
enum PaiStatus pai_erfinv(double u, double *out);

/**
 * Kernel from `size * size` row-major cells.
 *
 * # Safety
 * `cells` must be valid for `size * size` reads and `out` for one write.
 */
enum PaiStatus pai_grid_kernel_new(size_t size, const double *cells, struct PaiGridKernel **out);

/**
 * # Safety
 * `out` must be valid for one write.
 */
enum PaiStatus pai_grid_kernel_constant(size_t size, double value, struct PaiGridKernel **out);

/**
 * Block-averaged theoretical graphon of `method` (e.g. "snip") for
 * `activation` (e.g. "tanh") at density `rho`.
 *
 * # Safety
 * `method` and `activation` must be NUL-terminated strings; `out` valid
 * for one write.
 */
enum PaiStatus pai_theoretical_graphon_new(const char *method,
                                           const char *activation,
                                           double rho,
                                           size_t grid,
                                           size_t mc_samples,
                                           uint64_t seed,
                                           struct PaiGridKernel **out);

/**
 * Seed-averaged sorted masks of width `width`, pooled to `grid`.
 *
 * # Safety
 * As for `pai_theoretical_graphon_new`.
 */
enum PaiStatus pai_empirical_graphon_new(const char *method,
                                         const char *activation,
                                         double rho,
                                         size_t width,
                                         size_t seeds,
                                         size_t grid,
                                         uint64_t seed,
                                         struct PaiGridKernel **out);

/**
 * Grid size `G`, or 0 for a null handle.
 *
 * # Safety
 * `k` must be null or a live handle.
 */
size_t pai_grid_kernel_size(const struct PaiGridKernel *k);

/**
 * # Safety
 * `k` must be a live handle and `out` valid for one write.
 */
enum PaiStatus pai_grid_kernel_mean(const struct PaiGridKernel *k, double *out);

/**
 * Copies the `G * G` row-major cells into `out` (`len` must be at least
 * `G * G`).
 *
 * # Safety
 * `k` must be a live handle and `out` valid for `len` writes.
 */
enum PaiStatus pai_grid_kernel_copy(const struct PaiGridKernel *k, double *out, size_t len);

/**
 * # Safety
 * `k` must be null or a handle not yet freed.
 */
void pai_grid_kernel_free(struct PaiGridKernel *k);

/**
 * Cut norm of `a − b` on their shared grid.
 *
 * # Safety
 * `a`, `b` must be live handles; `value`, `upper_bound` valid for one
 * write each (`upper_bound` may be null).
 */
enum PaiStatus pai_cut_distance(const struct PaiGridKernel *a,
                                const struct PaiGridKernel *b,
                                double *value,
                                double *upper_bound);

/**
 * Cut norm of a `rows × cols` row-major matrix: exact when the smaller
 * side is at most 22, heuristic otherwise.
 *
 * # Safety
 * `data` must be valid for `rows * cols` reads; outputs as for
 * `pai_cut_distance`.
 */
enum PaiStatus pai_cut_norm(size_t rows,
                            size_t cols,
                            const double *data,
                            double *value,
                            double *upper_bound);

/**
 * Path density through three kernels indexed `[later, earlier]`; writes
 * `G` values.
 *
 * # Safety
 * Handles must be live and `out` valid for `len` writes.
 */
enum PaiStatus pai_path_density(const struct PaiGridKernel *w1,
                                const struct PaiGridKernel *w2,
                                const struct PaiGridKernel *w3,
                                double *out,
                                size_t len);

/**
 * `yᵀK⁻¹y` for an `m × m` row-major Gram matrix, with the jitter applied.
 *
 * # Safety
 * `k` valid for `m * m` reads, `y` for `m` reads, `value` for one write;
 * `jitter` may be null.
 */
enum PaiStatus pai_complexity_term(size_t m,
                                   const double *k,
                                   const double *y,
                                   double *value,
                                   double *jitter);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAILAB_H */
