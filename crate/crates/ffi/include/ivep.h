#ifndef IVEP_H
#define IVEP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IvepStatus {
  IVEP_STATUS_OK = 0,
  /**
   * Invalid settings or hyperparameters.
   */
  IVEP_STATUS_CONFIG = 1,
  /**
   * Malformed or inconsistent data.
   */
  IVEP_STATUS_DATA = 2,
  /**
   * Factorization breakdown, non-finite update or solver failure.
   */
  IVEP_STATUS_NUMERICAL = 3,
  /**
   * Null pointer or undersized buffer.
   */
  IVEP_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A panic was caught at the boundary.
   */
  IVEP_STATUS_PANIC = 5,
} IvepStatus;

typedef enum IvepPreset {
  /**
   * p = 300, q = 400.
   */
  IVEP_PRESET_FULL = 0,
  /**
   * p = 100, q = 120.
   */
  IVEP_PRESET_SCALED = 1,
  /**
   * p = 60, q = 80.
   */
  IVEP_PRESET_SMALL = 2,
} IvepPreset;

/**
 * Which coefficient estimate to copy out of a fit.
 */
typedef enum IvepEstimate {
  /**
   * Posterior means.
   */
  IVEP_ESTIMATE_DENSE = 0,
  /**
   * Ridge post-estimates, zero off the selected support.
   */
  IVEP_ESTIMATE_POST = 1,
  /**
   * Inclusion log-odds.
   */
  IVEP_ESTIMATE_LOG_ODDS = 2,
} IvepEstimate;

/**
 * Opaque dataset handle.
 */
typedef struct IvepDataset IvepDataset;

/**
 * Opaque fit handle.
 */
typedef struct IvepFit IvepFit;

typedef struct IvepFitConfig {
  double tol;
  size_t max_iters;
  double lambda_ridge;
  /**
   * Build the Stage II design from sparsified Stage I means.
   */
  bool sparse_xhat;
} IvepFitConfig;

typedef struct IvepHyperParams {
  double sigma0_sq;
  double tau0_sq;
  double nu0;
  double omega0;
  double p0;
  double pi0;
} IvepHyperParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failed call on this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length
 * including the terminator, or 0 when there is no message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ivep_last_error(char *buf, size_t len);

/**
 * Defaults used by the command-line tool.
 */
struct IvepFitConfig ivep_fit_config_default(void);

/**
 * Builds a dataset from `y` (length `n`), `x` (`n x p`) and `z` (`n x q`).
 *
 * # Safety
 * The arrays must hold the stated number of values; `out` must be writable.
 */
enum IvepStatus ivep_dataset_new(const double *y,
                                 const double *x,
                                 const double *z,
                                 size_t n,
                                 size_t p,
                                 size_t q,
                                 struct IvepDataset **out);

/**
 * Simulates a dataset under a preset's truth. `n = 0` picks the preset's
 * sample size.
 *
 * # Safety
 * `out` must be writable.
 */
enum IvepStatus ivep_dataset_simulate(enum IvepPreset preset,
                                      size_t n,
                                      uint64_t seed,
                                      struct IvepDataset **out);

/**
 * # Safety
 * `data` must be a live dataset handle; the out pointers must be writable.
 */
enum IvepStatus ivep_dataset_dims(const struct IvepDataset *data, size_t *n, size_t *p, size_t *q);

/**
 * Copies `y`, `x` and `z` (row-major) into caller buffers. Any of the
 * buffers may be null with length 0 to skip it.
 *
 * # Safety
 * Each non-null buffer must hold its stated length.
 */
enum IvepStatus ivep_dataset_copy(const struct IvepDataset *data,
                                  double *y,
                                  size_t y_len,
                                  double *x,
                                  size_t x_len,
                                  double *z,
                                  size_t z_len);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void ivep_dataset_free(struct IvepDataset *data);

/**
 * Strategy I hyperparameters from a two-stage LASSO fit.
 *
 * # Safety
 * `data` must be a live dataset handle; `out` must be writable.
 */
enum IvepStatus ivep_strategy1(const struct IvepDataset *data, struct IvepHyperParams *out);

/**
 * Runs both stages, sparsification and post-estimation. `config` may be
 * null for the defaults.
 *
 * # Safety
 * `data` and `hyper` must be valid; `config` null or valid; `out` writable.
 */
enum IvepStatus ivep_fit(const struct IvepDataset *data,
                         const struct IvepHyperParams *hyper,
                         const struct IvepFitConfig *config,
                         struct IvepFit **out);

/**
 * # Safety
 * `fit` must be a live fit handle; the out pointers must be writable.
 */
enum IvepStatus ivep_fit_dims(const struct IvepFit *fit, size_t *p, size_t *q);

/**
 * Copies the `p` second-stage coefficients into `out`.
 *
 * # Safety
 * `fit` must be a live fit handle; `out` must hold `len >= p` values.
 */
enum IvepStatus ivep_fit_beta(const struct IvepFit *fit,
                              enum IvepEstimate which,
                              double *out,
                              size_t len);

/**
 * Copies the `q x p` first-stage coefficients, row-major, into `out`.
 *
 * # Safety
 * `fit` must be a live fit handle; `out` must hold `len >= q * p` values.
 */
enum IvepStatus ivep_fit_gamma(const struct IvepFit *fit,
                               enum IvepEstimate which,
                               double *out,
                               size_t len);

/**
 * Writes 1 for each selected second-stage coefficient and 0 otherwise.
 *
 * # Safety
 * `fit` must be a live fit handle; `out` must hold `len >= p` bytes.
 */
enum IvepStatus ivep_fit_beta_support(const struct IvepFit *fit, uint8_t *out, size_t len);

/**
 * Number of Stage I columns that converged and whether Stage II did.
 *
 * # Safety
 * `fit` must be a live fit handle; the out pointers must be writable.
 */
enum IvepStatus ivep_fit_converged(const struct IvepFit *fit, size_t *stage1, bool *stage2);

/**
 * Predicts the response for `m` new rows of instruments `z` (`m x q`).
 *
 * # Safety
 * `fit` must be a live fit handle; `z` must hold `m * q` values and `out`
 * `len >= m` values.
 */
enum IvepStatus ivep_fit_predict(const struct IvepFit *fit,
                                 const double *z,
                                 size_t m,
                                 bool use_post,
                                 double *out,
                                 size_t len);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void ivep_fit_free(struct IvepFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IVEP_H */
