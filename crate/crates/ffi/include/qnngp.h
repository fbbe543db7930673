#ifndef QNNGP_H
#define QNNGP_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum QnngpStatus {
  QNNGP_STATUS_OK = 0,
  QNNGP_STATUS_NULL_POINTER = 1,
  QNNGP_STATUS_INVALID_ARGUMENT = 2,
  QNNGP_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Ill-conditioned or singular linear algebra.
   */
  QNNGP_STATUS_NUMERICAL = 4,
  QNNGP_STATUS_IO = 5,
  QNNGP_STATUS_PANIC = 6,
} QnngpStatus;

/**
 * Opaque random circuit (brickwork ensemble draw).
 */
typedef struct QnngpCircuit QnngpCircuit;

/**
 * Opaque Weingarten table.
 */
typedef struct QnngpWeingarten QnngpWeingarten;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t qnngp_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qnngp_version(void);

/**
 * Build the Weingarten table for `1 <= p <= 4` (pseudo-inverse when `d < p`).
 *
 * # Safety
 * `table` must be a valid pointer to writable storage for a handle.
 */
enum QnngpStatus qnngp_weingarten_new(size_t p, size_t d, struct QnngpWeingarten **table);

/**
 * # Safety
 * `table` must be null or a handle from [`qnngp_weingarten_new`], not yet freed.
 */
void qnngp_weingarten_free(struct QnngpWeingarten *table);

/**
 * `Wg` for the cycle type given as `n_parts` cycle lengths.
 *
 * # Safety
 * `table` must be a live handle, `parts` must point to `n_parts` values and
 * `value` to writable storage.
 */
enum QnngpStatus qnngp_weingarten_value(const struct QnngpWeingarten *table,
                                        const size_t *parts,
                                        size_t n_parts,
                                        double *value);

/**
 * `max_σ |Σ_τ G(σ, τ) Wg(τ) − δ(σ, e)|` for the table.
 *
 * # Safety
 * `table` must be a live handle and `residual` writable.
 */
enum QnngpStatus qnngp_weingarten_residual(const struct QnngpWeingarten *table, double *residual);

/**
 * Exact Haar average `E[Π_k Tr(U ρ_k U† O_k)]` over `p` pairs of `d × d`
 * matrices. `rhos` and `observables` each hold `p · d · d` complex entries.
 *
 * # Safety
 * `rhos` and `observables` must point to `2 p d²` doubles each; `value` must
 * be writable.
 */
enum QnngpStatus qnngp_haar_expectation(size_t d,
                                        size_t p,
                                        const double *rhos,
                                        const double *observables,
                                        double *value);

/**
 * Draw a brickwork random circuit from `seed`.
 *
 * # Safety
 * `circuit` must be writable storage for a handle.
 */
enum QnngpStatus qnngp_circuit_new(size_t n_qubits,
                                   size_t depth,
                                   uint64_t seed,
                                   struct QnngpCircuit **circuit);

/**
 * # Safety
 * `circuit` must be null or a live handle from [`qnngp_circuit_new`].
 */
void qnngp_circuit_free(struct QnngpCircuit *circuit);

/**
 * Number of angles (the depth). Returns 0 for a null handle.
 *
 * # Safety
 * `circuit` must be null or a live handle.
 */
size_t qnngp_circuit_n_params(const struct QnngpCircuit *circuit);

/**
 * Copy the sampled angles into `theta` (length `n_params`).
 *
 * # Safety
 * `circuit` must be a live handle and `theta` must hold `len` doubles.
 */
enum QnngpStatus qnngp_circuit_theta(const struct QnngpCircuit *circuit, double *theta, size_t len);

/**
 * `Tr(U(θ) ρ(x) U(θ)† P)` with `ρ(x)` the ZZ feature-map state of the
 * features and `P` a Pauli string such as `"ZI"`.
 *
 * # Safety
 * Pointers must reference `n_theta` and `n_features` doubles, a
 * NUL-terminated string and a writable double.
 */
enum QnngpStatus qnngp_circuit_expectation(const struct QnngpCircuit *circuit,
                                           const double *theta,
                                           size_t n_theta,
                                           const double *features,
                                           size_t n_features,
                                           const char *pauli,
                                           double *value);

/**
 * Parameter-shift gradient of [`qnngp_circuit_expectation`] with respect to
 * all `n_theta` angles, written to `grad`.
 *
 * # Safety
 * As for [`qnngp_circuit_expectation`]; `grad` must hold `n_theta` doubles.
 */
enum QnngpStatus qnngp_circuit_gradient(const struct QnngpCircuit *circuit,
                                        const double *theta,
                                        size_t n_theta,
                                        const double *features,
                                        size_t n_features,
                                        const char *pauli,
                                        double *grad);

/**
 * Single-output GP posterior mean. `kernel` is the row-major
 * `n_points × n_points` prior covariance whose first `n_obs` points carry
 * `labels`; the mean on the remaining points is written to `mean`. A
 * negative `jitter` selects the default.
 *
 * # Safety
 * `kernel` must hold `n_points²` doubles, `labels` `n_obs` and `mean`
 * `n_points - n_obs`.
 */
enum QnngpStatus qnngp_gp_posterior_mean(const double *kernel,
                                         size_t n_points,
                                         size_t n_obs,
                                         const double *labels,
                                         double jitter,
                                         double *mean);

/**
 * Excess kurtosis of `n` samples with its jackknife standard error.
 *
 * # Safety
 * `samples` must hold `n` doubles; `value` and `std_error` must be writable.
 */
enum QnngpStatus qnngp_excess_kurtosis(const double *samples,
                                       size_t n,
                                       double *value,
                                       double *std_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QNNGP_H */
