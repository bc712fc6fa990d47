#ifndef PLAN_IV_H
#define PLAN_IV_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlanIvStatus {
  PLAN_IV_STATUS_OK = 0,
  PLAN_IV_STATUS_NULL_ARGUMENT = 1,
  PLAN_IV_STATUS_INVALID_UTF8 = 2,
  PLAN_IV_STATUS_CONFIG = 3,
  PLAN_IV_STATUS_DIMENSION = 4,
  PLAN_IV_STATUS_DEGENERATE = 5,
  PLAN_IV_STATUS_NUMERICAL = 6,
  PLAN_IV_STATUS_PRECONDITION = 7,
  PLAN_IV_STATUS_IO = 8,
  PLAN_IV_STATUS_JSON = 9,
  PLAN_IV_STATUS_PANIC = 10,
} PlanIvStatus;

/**
 * An offline dataset, hidden columns included.
 */
typedef struct PlanIvDataset PlanIvDataset;

/**
 * An experiment configuration together with the environment it builds.
 */
typedef struct PlanIvExperiment PlanIvExperiment;

/**
 * Fitted parameters and confidence sets for every stage.
 */
typedef struct PlanIvFits PlanIvFits;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *plan_iv_last_error(void);

const char *plan_iv_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void plan_iv_string_free(char *s);

/**
 * Builds an experiment from its JSON configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum PlanIvStatus plan_iv_experiment_new(const char *config_json, struct PlanIvExperiment **out);

/**
 * # Safety
 * `exp` must be null or a live handle from [`plan_iv_experiment_new`].
 */
void plan_iv_experiment_free(struct PlanIvExperiment *exp);

/**
 * Collects `k` trajectories with the experiment's behavior policy.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum PlanIvStatus plan_iv_collect(const struct PlanIvExperiment *exp,
                                  size_t k,
                                  uint64_t seed,
                                  struct PlanIvDataset **out);

/**
 * Parses a dataset from NDJSON text.
 *
 * # Safety
 * `ndjson` must be a NUL-terminated string; `out` must be writable.
 */
enum PlanIvStatus plan_iv_dataset_from_ndjson(const char *ndjson, struct PlanIvDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum PlanIvStatus plan_iv_dataset_len(const struct PlanIvDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable. The string is
 * released with [`plan_iv_string_free`].
 */
enum PlanIvStatus plan_iv_dataset_to_ndjson(const struct PlanIvDataset *ds, char **out);

/**
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
void plan_iv_dataset_free(struct PlanIvDataset *ds);

/**
 * Fits every stage with the experiment's ridge and threshold settings.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PlanIvStatus plan_iv_fit(const struct PlanIvExperiment *exp,
                              const struct PlanIvDataset *ds,
                              struct PlanIvFits **out);

/**
 * Number of fitted targets across all stages.
 *
 * # Safety
 * `fits` must be a live handle; `out` must be writable.
 */
enum PlanIvStatus plan_iv_fits_len(const struct PlanIvFits *fits, size_t *out);

/**
 * # Safety
 * `fits` must be a live handle; `out` must be writable. The string is
 * released with [`plan_iv_string_free`].
 */
enum PlanIvStatus plan_iv_fits_to_json(const struct PlanIvFits *fits, char **out);

/**
 * # Safety
 * `fits` must be null or a live fits handle.
 */
void plan_iv_fits_free(struct PlanIvFits *fits);

/**
 * Plans pessimistically on `fits`; writes the plan as JSON.
 *
 * # Safety
 * Handles must be live; `out` must be writable. The string is released
 * with [`plan_iv_string_free`].
 */
enum PlanIvStatus plan_iv_plan_json(const struct PlanIvExperiment *exp,
                                    const struct PlanIvFits *fits,
                                    char **out);

/**
 * Two-stage least squares with ridge `lambda`. `theta_out` receives `n` values.
 *
 * # Safety
 * `x` holds `k*n`, `z` holds `k*m` and `y` holds `k` doubles, all
 * row-major; `theta_out` has room for `n` doubles.
 */
enum PlanIvStatus plan_iv_fit_2sls(const double *x,
                                   const double *z,
                                   const double *y,
                                   size_t k,
                                   size_t m,
                                   size_t n,
                                   double lambda,
                                   double *theta_out);

/**
 * Closed-form minimax loss of `theta` on a design.
 *
 * # Safety
 * Same layout as [`plan_iv_fit_2sls`]; `theta` holds `n` doubles.
 */
enum PlanIvStatus plan_iv_minimax_loss(const double *x,
                                       const double *z,
                                       const double *y,
                                       size_t k,
                                       size_t m,
                                       size_t n,
                                       const double *theta,
                                       double lambda,
                                       double *out);

/**
 * Confidence radius for a linear class. `transition` selects the
 * transition target instead of the reward.
 *
 * # Safety
 * `out` must be writable.
 */
enum PlanIvStatus plan_iv_threshold_linear(size_t k,
                                           size_t m,
                                           size_t n,
                                           size_t horizon,
                                           size_t state_dim,
                                           bool transition,
                                           double c0,
                                           double delta,
                                           double l_bound,
                                           double sigma,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLAN_IV_H */
