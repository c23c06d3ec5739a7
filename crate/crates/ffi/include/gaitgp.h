#ifndef GAITGP_H
#define GAITGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Validation and numeric failures match the CLI exit statuses.
 */
typedef enum GaitgpStatus {
  GAITGP_STATUS_OK = 0,
  GAITGP_STATUS_NULL_POINTER = 1,
  GAITGP_STATUS_INVALID_INPUT = 2,
  GAITGP_STATUS_NUMERIC_FAILURE = 3,
  GAITGP_STATUS_PANIC = 4,
} GaitgpStatus;

/**
 * Opaque four-state HMM.
 */
typedef struct GaitgpHmm GaitgpHmm;

/**
 * Opaque fitted MoGP.
 */
typedef struct GaitgpMogp GaitgpMogp;

/**
 * Composite kernel hyperparameters in natural (positive) units.
 */
typedef struct GaitgpKernelParams {
  double periodic_variance;
  double periodic_lengthscale;
  double period;
  double se_variance;
  double se_lengthscale;
  double matern_variance;
  double matern_lengthscale;
} GaitgpKernelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next gaitgp call on the same thread.
 */
const char *gaitgp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gaitgp_version(void);

/**
 * Composite kernel k(t, t').
 *
 * # Safety
 * `params` and `out` must be valid pointers.
 */
enum GaitgpStatus gaitgp_kernel_eval(const struct GaitgpKernelParams *params,
                                     double t,
                                     double t_prime,
                                     double *out);

/**
 * Fits a MoGP by Adam on `n` observations `(times[i], outputs[i], values[i])`
 * with default optimizer settings except `iterations` and `seed`.
 *
 * # Safety
 * Arrays must hold `n` elements; `out` must be a valid pointer.
 */
enum GaitgpStatus gaitgp_mogp_fit(const double *times,
                                  const size_t *outputs,
                                  const double *values,
                                  size_t n,
                                  size_t iterations,
                                  uint64_t seed,
                                  struct GaitgpMogp **out);

/**
 * Loads a `mogp-v1` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum GaitgpStatus gaitgp_mogp_load(const char *path, struct GaitgpMogp **out);

/**
 * Writes a `mogp-v1` file atomically.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum GaitgpStatus gaitgp_mogp_save(const struct GaitgpMogp *model, const char *path);

/**
 * Number of outputs.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum GaitgpStatus gaitgp_mogp_outputs(const struct GaitgpMogp *model, size_t *out);

/**
 * Log marginal likelihood of the model on its training data.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum GaitgpStatus gaitgp_mogp_lml(const struct GaitgpMogp *model, double *out);

/**
 * Posterior mean and standard deviation at `nq` query times. Outputs are
 * written output-major: `mean[m * nq + i]`, each buffer `outputs * nq` long.
 *
 * # Safety
 * `query` holds `nq` values; `mean` and `std` hold `outputs * nq` values.
 */
enum GaitgpStatus gaitgp_mogp_predict(const struct GaitgpMogp *model,
                                      const double *query,
                                      size_t nq,
                                      double *mean,
                                      double *std);

/**
 * Coregionalization matrix B, row-major, `outputs * outputs` values.
 *
 * # Safety
 * `out` holds `outputs * outputs` values.
 */
enum GaitgpStatus gaitgp_mogp_coregionalization(const struct GaitgpMogp *model, double *out);

/**
 * Frees a MoGP handle; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void gaitgp_mogp_free(struct GaitgpMogp *model);

/**
 * The default four-state HMM.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum GaitgpStatus gaitgp_hmm_default(struct GaitgpHmm **out);

/**
 * Builds an HMM from `initial[4]`, row-major `transitions[16]`, row-major
 * `means[8]` (state, then right/left ankle) and `covariance[4]`.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be valid.
 */
enum GaitgpStatus gaitgp_hmm_new(const double *initial,
                                 const double *transitions,
                                 const double *means,
                                 const double *covariance,
                                 struct GaitgpHmm **out);

/**
 * Loads an `hmm-v1` file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum GaitgpStatus gaitgp_hmm_load(const char *path, struct GaitgpHmm **out);

/**
 * Renders the model as an `hmm-v1` document into `buf`. `written` receives
 * the document length plus one for the NUL; when `buf_len` is smaller,
 * nothing is copied and the call still succeeds so callers can size a buffer.
 *
 * # Safety
 * `buf` holds `buf_len` bytes (may be NULL when `buf_len` is 0).
 */
enum GaitgpStatus gaitgp_hmm_to_document(const struct GaitgpHmm *model,
                                         char *buf,
                                         size_t buf_len,
                                         size_t *written);

/**
 * Parses an `hmm-v1` document.
 *
 * # Safety
 * `document` must be NUL-terminated; `out` must be valid.
 */
enum GaitgpStatus gaitgp_hmm_from_document(const char *document, struct GaitgpHmm **out);

/**
 * Forward log-likelihood of `steps` interleaved (right, left) observations.
 *
 * # Safety
 * `obs` holds `2 * steps` values; `out` must be valid.
 */
enum GaitgpStatus gaitgp_hmm_forward(const struct GaitgpHmm *model,
                                     const double *obs,
                                     size_t steps,
                                     double *out);

/**
 * Viterbi path as state labels 1..4 plus its joint log-probability.
 *
 * # Safety
 * `obs` holds `2 * steps` values, `states` holds `steps` bytes and
 * `log_joint` must be valid.
 */
enum GaitgpStatus gaitgp_hmm_viterbi(const struct GaitgpHmm *model,
                                     const double *obs,
                                     size_t steps,
                                     uint8_t *states,
                                     double *log_joint);

/**
 * Frees an HMM handle; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void gaitgp_hmm_free(struct GaitgpHmm *model);

/**
 * Mean absolute error.
 *
 * # Safety
 * `pred` and `truth` hold `n` values; `out` must be valid.
 */
enum GaitgpStatus gaitgp_mae(const double *pred, const double *truth, size_t n, double *out);

/**
 * Coefficient of determination of `pred` against `truth`.
 *
 * # Safety
 * `pred` and `truth` hold `n` values; `out` must be valid.
 */
enum GaitgpStatus gaitgp_r_squared(const double *pred, const double *truth, size_t n, double *out);

/**
 * Dynamic time warping distance with absolute-difference cost.
 *
 * # Safety
 * `a` holds `na` values, `b` holds `nb`; `out` must be valid.
 */
enum GaitgpStatus gaitgp_dtw(const double *a, size_t na, const double *b, size_t nb, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAITGP_H */
