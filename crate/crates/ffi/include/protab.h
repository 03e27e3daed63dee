#ifndef PROTAB_H
#define PROTAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum ProtabStatus {
  PROTAB_STATUS_OK = 0,
  PROTAB_STATUS_NULL_POINTER = 1,
  PROTAB_STATUS_INVALID_ARGUMENT = 2,
  PROTAB_STATUS_IO = 3,
  PROTAB_STATUS_DATA = 4,
  PROTAB_STATUS_MODEL = 5,
  PROTAB_STATUS_TRAINING = 6,
  PROTAB_STATUS_NUMERIC = 7,
  PROTAB_STATUS_BUFFER_TOO_SMALL = 8,
  PROTAB_STATUS_PANIC = 99,
} ProtabStatus;

/**
 * A loaded, unprocessed dataset.
 */
typedef struct ProtabDataset ProtabDataset;

/**
 * A trained model, plus the preprocessing fitted on its training split when
 * it was trained through this interface.
 */
typedef struct ProtabModel ProtabModel;

/**
 * Test scores of a training run.
 */
typedef struct ProtabTrainSummary {
  /**
   * Test metric of the phase-1 model (accuracy or RMSE).
   */
  double baseline_test;
  /**
   * Test metric of the returned model.
   */
  double test;
  /**
   * 1 when higher values are better (accuracy), 0 for RMSE.
   */
  int32_t higher_is_better;
  size_t num_prototypes;
} ProtabTrainSummary;

typedef struct ProtabWilcoxon {
  size_t n;
  double statistic;
  double p_value;
  int32_t exact;
} ProtabWilcoxon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *protab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *protab_version(void);

/**
 * Loads a registered preset (e.g. "AD", "CA", "synthetic") from `data_dir`.
 *
 * # Safety
 * `name` and `data_dir` must be NUL-terminated strings; `out` must be writable.
 */
enum ProtabStatus protab_dataset_load_preset(const char *name,
                                             const char *data_dir,
                                             struct ProtabDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void protab_dataset_free(struct ProtabDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle; outputs must be writable.
 */
enum ProtabStatus protab_dataset_shape(const struct ProtabDataset *dataset,
                                       size_t *rows,
                                       size_t *features);

/**
 * Runs the full two-phase pipeline. `config_toml` may be null for defaults;
 * `summary` may be null.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum ProtabStatus protab_train(const char *config_toml,
                               uint64_t seed,
                               struct ProtabModel **out,
                               struct ProtabTrainSummary *summary);

/**
 * Loads a checkpoint. Such models expect already-preprocessed datasets.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ProtabStatus protab_model_load(const char *path, struct ProtabModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` must be NUL-terminated.
 */
enum ProtabStatus protab_model_save(const struct ProtabModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void protab_model_free(struct ProtabModel *model);

/**
 * Number of outputs per row (1 for binary and regression, classes otherwise).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum ProtabStatus protab_model_output_dim(const struct ProtabModel *model, size_t *out);

/**
 * Raw model outputs (logits or normalized regression values), row-major
 * `rows x output_dim`, written to `out` of capacity `capacity`. `written`
 * receives the number of values required even when the buffer is too small.
 *
 * # Safety
 * Handles must be live; `out` must hold `capacity` doubles.
 */
enum ProtabStatus protab_model_predict(const struct ProtabModel *model,
                                       const struct ProtabDataset *dataset,
                                       double *out,
                                       size_t capacity,
                                       size_t *written);

/**
 * Accuracy or RMSE of `model` on every row of `dataset`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ProtabStatus protab_model_evaluate(const struct ProtabModel *model,
                                        const struct ProtabDataset *dataset,
                                        double *out);

/**
 * Transport cost from one point to prototypes with simplex weights `r`.
 *
 * # Safety
 * `r` and `cost` must hold `k` doubles; `out` must be writable.
 */
enum ProtabStatus protab_singleton_ot(const double *r, const double *cost, size_t k, double *out);

/**
 * Entropic transport between `a` (length n) and `b` (length m) under the
 * row-major `n x m` cost. `plan` may be null; otherwise it receives n*m values.
 *
 * # Safety
 * Buffers must have the stated lengths; `out_cost` must be writable.
 */
enum ProtabStatus protab_sinkhorn(const double *a,
                                  size_t n,
                                  const double *b,
                                  size_t m,
                                  const double *cost,
                                  double reg,
                                  size_t max_iter,
                                  double tol,
                                  double *plan,
                                  double *out_cost);

/**
 * Orthogonality penalty of the row-major `k x d` prototype matrix; the
 * gradient is written to `grad` (k*d values) unless it is null.
 *
 * # Safety
 * `prototypes` must hold k*d doubles; `out` must be writable.
 */
enum ProtabStatus protab_orthogonalization_loss(const double *prototypes,
                                                size_t k,
                                                size_t d,
                                                double *out,
                                                double *grad);

/**
 * Default number of prototypes for `num_features` input columns.
 */
size_t protab_choose_k(size_t num_features);

/**
 * Two-sided paired Wilcoxon signed-rank test.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` must be writable.
 */
enum ProtabStatus protab_wilcoxon(const double *x,
                                  const double *y,
                                  size_t n,
                                  struct ProtabWilcoxon *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTAB_H */
