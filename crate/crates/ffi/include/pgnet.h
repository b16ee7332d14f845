#ifndef PGNET_H
#define PGNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Input, state and numerical errors share their values with
 * the command line exit codes.
 */
typedef enum PgnetStatus {
  PGNET_STATUS_OK = 0,
  PGNET_STATUS_INVALID_INPUT = 2,
  PGNET_STATUS_STATE_MISMATCH = 3,
  PGNET_STATUS_NUMERICAL = 4,
  PGNET_STATUS_NULL_POINTER = 5,
  PGNET_STATUS_BUFFER_TOO_SMALL = 6,
  PGNET_STATUS_PANIC = 7,
} PgnetStatus;

/**
 * Opaque model handle: module tree plus parameters.
 */
typedef struct PgnetModel PgnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a training run directory (`config.json` plus `best.ckpt`, or
 * `final.ckpt` when `use_final` is non-zero).
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string; `out` must be writable.
 */
enum PgnetStatus pgnet_model_load(const char *run_dir, int32_t use_final, struct PgnetModel **out);

/**
 * Builds a freshly initialised model from a JSON model configuration
 * (an empty string selects the defaults).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum PgnetStatus pgnet_model_init(const char *config_json, uint64_t seed, struct PgnetModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void pgnet_model_free(struct PgnetModel *model);

/**
 * Number of points the model outputs at its finest level.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum PgnetStatus pgnet_model_output_points(const struct PgnetModel *model, size_t *out);

/**
 * Completes a partial cloud using a prior cloud. Writes the finest level
 * into `out` (capacity `out_capacity` points) and its size into
 * `out_points`; when the buffer is too small only `out_points` is set.
 *
 * # Safety
 * Point buffers must hold `3 * n` doubles; `out` must hold
 * `3 * out_capacity` doubles.
 */
enum PgnetStatus pgnet_model_complete(const struct PgnetModel *model,
                                      const double *partial,
                                      size_t n_partial,
                                      const double *prior,
                                      size_t n_prior,
                                      double *out,
                                      size_t out_capacity,
                                      size_t *out_points);

/**
 * Symmetric L1 Chamfer distance.
 *
 * # Safety
 * `a` and `b` must hold `3 * na` and `3 * nb` doubles; `out` must be writable.
 */
enum PgnetStatus pgnet_chamfer_l1(const double *a,
                                  size_t na,
                                  const double *b,
                                  size_t nb,
                                  double *out);

/**
 * F-score of `pred` against `gt` at distance threshold `tau`.
 *
 * # Safety
 * `pred` and `gt` must hold `3 * n` doubles each; `out` must be writable.
 */
enum PgnetStatus pgnet_fscore(const double *pred,
                              size_t n_pred,
                              const double *gt,
                              size_t n_gt,
                              double tau,
                              double *out);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *pgnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pgnet_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGNET_H */
