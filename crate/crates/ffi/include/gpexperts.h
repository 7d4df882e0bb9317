#ifndef GPEXPERTS_H
#define GPEXPERTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpxStatus {
  GPX_STATUS_OK = 0,
  GPX_STATUS_INVALID_ARGUMENT = 1,
  GPX_STATUS_NUMERICAL_FAILURE = 2,
  GPX_STATUS_NULL_POINTER = 3,
  GPX_STATUS_IO = 4,
  GPX_STATUS_PANIC = 5,
} GpxStatus;

typedef enum GpxPartition {
  GPX_PARTITION_RANDOM = 0,
  GPX_PARTITION_KMEANS = 1,
} GpxPartition;

typedef enum GpxMethod {
  GPX_METHOD_POE = 0,
  GPX_METHOD_GPOE = 1,
  GPX_METHOD_BCM = 2,
  GPX_METHOD_RBCM = 3,
  GPX_METHOD_GRBCM = 4,
  GPX_METHOD_BARYCENTER = 5,
} GpxMethod;

typedef enum GpxFunctional {
  GPX_FUNCTIONAL_UNIFORM = 0,
  GPX_FUNCTIONAL_VARIANCE = 1,
  GPX_FUNCTIONAL_DIFF_ENTROPY = 2,
  GPX_FUNCTIONAL_WASSERSTEIN = 3,
} GpxFunctional;

typedef enum GpxTransform {
  GPX_TRANSFORM_SOFTMAX = 0,
  GPX_TRANSFORM_RAW = 1,
} GpxTransform;

typedef enum GpxSpace {
  GPX_SPACE_F = 0,
  GPX_SPACE_Y = 1,
} GpxSpace;

typedef enum GpxBarycenterMode {
  GPX_BARYCENTER_MODE_PAPER_VARIANCE_AVG = 0,
  GPX_BARYCENTER_MODE_EXACT_W2 = 1,
} GpxBarycenterMode;

/**
 * Training data together with its standardization record.
 */
typedef struct GpxDataset GpxDataset;

/**
 * A trained pool of experts.
 */
typedef struct GpxPool GpxPool;

/**
 * Aggregation settings. `temperature` is read only for the softmax
 * transform; softmax weights are always normalized.
 */
typedef struct GpxAggregation {
  enum GpxMethod method;
  enum GpxFunctional functional;
  enum GpxTransform transform;
  double temperature;
  bool normalized;
  enum GpxSpace space;
  enum GpxBarycenterMode barycenter_mode;
} GpxAggregation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gpx_version(void);

/**
 * Message for the most recent failure on this thread; empty after success.
 * Valid until the next call into the library from the same thread.
 */
const char *gpx_last_error_message(void);

/**
 * Copies `n` rows of `d` features (`x`, row-major) and `n` targets into a
 * new dataset. With `standardize`, features and targets are z-scored and
 * the scaling is remembered for prediction.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to writable storage.
 */
enum GpxStatus gpx_dataset_new(const double *x,
                               const double *y,
                               size_t n,
                               size_t d,
                               bool standardize,
                               struct GpxDataset **out);

/**
 * Reads a header + numeric CSV file and standardizes it. `target` names the
 * target column; pass NULL for the last column.
 *
 * # Safety
 * `path` and a non-null `target` must be NUL-terminated strings.
 */
enum GpxStatus gpx_dataset_load_csv(const char *path, const char *target, struct GpxDataset **out);

/**
 * # Safety
 * `dataset` must be NULL or a handle from this library not yet freed.
 */
void gpx_dataset_free(struct GpxDataset *dataset);

/**
 * # Safety
 * Pointers must be valid as documented on [`gpx_dataset_new`].
 */
enum GpxStatus gpx_dataset_shape(const struct GpxDataset *dataset, size_t *n, size_t *d);

/**
 * Partitions the dataset and trains a pool of experts with shared
 * hyperparameters using default optimizer settings.
 *
 * # Safety
 * `dataset` must be a live handle and `out` writable.
 */
enum GpxStatus gpx_pool_train(const struct GpxDataset *dataset,
                              enum GpxPartition strategy,
                              size_t points_per_expert,
                              uint64_t seed,
                              struct GpxPool **out);

/**
 * # Safety
 * `pool` must be NULL or a handle from this library not yet freed.
 */
void gpx_pool_free(struct GpxPool *pool);

/**
 * # Safety
 * `pool` must be a live handle and `out` writable.
 */
enum GpxStatus gpx_pool_num_experts(const struct GpxPool *pool, size_t *out);

/**
 * Writes the shared log-space hyperparameters `[log ℓ_1..d, log σ_f, log σ_y]`
 * into `out`, which must hold `len = d + 2` doubles.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum GpxStatus gpx_pool_hyperparameters(const struct GpxPool *pool, double *out, size_t len);

/**
 * Prepares grBCM. A `master_fraction` of zero or less selects the default
 * master size (the mean expert size).
 *
 * # Safety
 * `pool` must be a live handle.
 */
enum GpxStatus gpx_pool_build_grbcm(struct GpxPool *pool, double master_fraction, uint64_t seed);

/**
 * Aggregated predictions of observations y at `t` inputs (`x`, row-major
 * `t × d`). Inputs and outputs are in the units the dataset was created
 * with; standardization is applied and undone internally. Points that fail
 * to aggregate get NaN and make the call return the first failure's status.
 *
 * # Safety
 * `x` must hold `t * d` doubles; `out_mean` and `out_var` `t` doubles each.
 */
enum GpxStatus gpx_pool_predict(const struct GpxPool *pool,
                                const double *x,
                                size_t t,
                                size_t d,
                                const struct GpxAggregation *config,
                                double *out_mean,
                                double *out_var);

/**
 * Aggregates `j` expert predictions at one test point. For grBCM the arrays
 * hold the augmented children and `master_mean`/`master_var` the master
 * prediction; other methods ignore them. `out_weights` may be NULL, else it
 * receives the `j` weights used.
 *
 * # Safety
 * `means` and `vars` must hold `j` doubles; a non-null `out_weights` `j` doubles.
 */
enum GpxStatus gpx_aggregate(const double *means,
                             const double *vars,
                             size_t j,
                             double prior_var,
                             double master_mean,
                             double master_var,
                             const struct GpxAggregation *config,
                             double *out_mean,
                             double *out_var,
                             double *out_weights);

/**
 * Squared 2-Wasserstein distance between N(m1, v1) and N(m2, v2).
 *
 * # Safety
 * `out` must be writable.
 */
enum GpxStatus gpx_w2_gaussian(double m1, double v1, double m2, double v2, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPEXPERTS_H */
