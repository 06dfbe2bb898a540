#ifndef TACTILE_ZSL_H
#define TACTILE_ZSL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TzStatus {
  TZ_STATUS_OK = 0,
  TZ_STATUS_NULL_POINTER = 1,
  TZ_STATUS_INVALID_ARGUMENT = 2,
  TZ_STATUS_FORMAT = 3,
  TZ_STATUS_IO = 4,
  TZ_STATUS_DATA = 5,
  TZ_STATUS_NUMERICAL = 6,
  TZ_STATUS_UNTRAINED = 7,
  TZ_STATUS_PANIC = 8,
} TzStatus;

/**
 * Opaque dataset handle.
 */
typedef struct TzDataset TzDataset;

/**
 * Opaque Gaussian gate handle.
 */
typedef struct TzGate TzGate;

/**
 * Opaque model handle.
 */
typedef struct TzModel TzModel;

/**
 * Shape of a synthetic dataset.
 */
typedef struct TzSyntheticConfig {
  size_t touched;
  size_t validation;
  size_t untouched;
  size_t d_v;
  size_t d_s;
  size_t d_x;
  size_t samples_per_class;
  double noise;
  uint64_t seed;
} TzSyntheticConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next
 * call on the same thread.
 */
const char *tz_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tz_version(void);

/**
 * `2 a b / (a + b)`, or 0 when either input is not positive.
 */
double tz_harmonic_mean(double acc_t, double acc_u);

/**
 * The default desk-scale dataset shape.
 */
struct TzSyntheticConfig tz_synthetic_config_default(void);

/**
 * # Safety
 * `cfg` must point to a valid config and `out` to writable storage.
 */
enum TzStatus tz_dataset_generate(const struct TzSyntheticConfig *cfg, struct TzDataset **out);

/**
 * Loads a dataset from a directory or manifest path.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TzStatus tz_dataset_load(const char *path, struct TzDataset **out);

/**
 * Writes the dataset files and manifest into `dir`.
 *
 * # Safety
 * `ds` must be a live handle and `dir` a NUL-terminated string.
 */
enum TzStatus tz_dataset_save(const struct TzDataset *ds, const char *dir);

/**
 * Feature widths and row count of a dataset.
 *
 * # Safety
 * `ds` must be a live handle; output pointers may be null to skip a value.
 */
enum TzStatus tz_dataset_shape(const struct TzDataset *ds,
                               size_t *d_v,
                               size_t *d_s,
                               size_t *d_x,
                               size_t *rows);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void tz_dataset_free(struct TzDataset *ds);

/**
 * Builds and trains a model on the touched training rows with the default
 * desk configuration. `iterations` overrides the configured count.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum TzStatus tz_model_train(const struct TzDataset *ds,
                             size_t iterations,
                             uint64_t seed,
                             struct TzModel **out);

/**
 * Runs `iterations` more training iterations on an existing model.
 *
 * # Safety
 * `model` and `ds` must be live handles.
 */
enum TzStatus tz_model_continue(struct TzModel *model,
                                const struct TzDataset *ds,
                                size_t iterations,
                                uint64_t seed);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TzStatus tz_model_load(const char *path, struct TzModel **out);

/**
 * Saves the model, with `gate` embedded when it is not null.
 *
 * # Safety
 * `model` must be a live handle, `gate` null or live, `path` NUL-terminated.
 */
enum TzStatus tz_model_save(const struct TzModel *model,
                            const struct TzGate *gate,
                            const char *path);

/**
 * Iterations the model has been trained for.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum TzStatus tz_model_iterations(const struct TzModel *model, uint64_t *out);

/**
 * Generates one tactile row per conditioning row. `visual` is `rows x d_v`,
 * `semantic` is `rows x d_s`, and `out` holds `rows x d_x` values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum TzStatus tz_model_generate(const struct TzModel *model,
                                const double *visual,
                                const double *semantic,
                                size_t rows,
                                uint64_t seed,
                                double *out,
                                size_t out_len);

/**
 * Conventional zero-shot average accuracy on the untouched rows of `ds`.
 *
 * # Safety
 * `model` and `ds` must be live handles and `accuracy` writable.
 */
enum TzStatus tz_eval_zsl(const struct TzModel *model,
                          const struct TzDataset *ds,
                          uint64_t seed,
                          double *accuracy);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tz_model_free(struct TzModel *model);

/**
 * Fits a diagonal Gaussian to `rows x cols` features; the threshold is unset.
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` be writable.
 */
enum TzStatus tz_gate_fit(const double *x, size_t rows, size_t cols, struct TzGate **out);

/**
 * Loads the gate stored in a model container.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum TzStatus tz_gate_load(const char *path, struct TzGate **out);

/**
 * # Safety
 * `gate` must be a live handle.
 */
enum TzStatus tz_gate_set_threshold(struct TzGate *gate, double beta);

/**
 * # Safety
 * `gate` must be a live handle, `x` hold `len` values, `out` be writable.
 */
enum TzStatus tz_gate_log_density(const struct TzGate *gate,
                                  const double *x,
                                  size_t len,
                                  double *out);

/**
 * Writes 1 when `x` routes to the touched classifier, 0 otherwise.
 *
 * # Safety
 * `gate` must be a live handle, `x` hold `len` values, `touched` be writable.
 */
enum TzStatus tz_gate_route(const struct TzGate *gate,
                            const double *x,
                            size_t len,
                            int32_t *touched);

/**
 * # Safety
 * `gate` must be null or a handle not yet freed.
 */
void tz_gate_free(struct TzGate *gate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACTILE_ZSL_H */
