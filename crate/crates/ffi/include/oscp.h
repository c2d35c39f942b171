/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef OSCP_H
#define OSCP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OscpStatus {
  OSCP_STATUS_OK = 0,
  OSCP_STATUS_NULL_POINTER = 1,
  OSCP_STATUS_INVALID_ARGUMENT = 2,
  OSCP_STATUS_DATA_ERROR = 3,
  OSCP_STATUS_INSUFFICIENT_DATA = 4,
  OSCP_STATUS_DIMENSION_MISMATCH = 5,
  OSCP_STATUS_NODE_LIMIT = 6,
  OSCP_STATUS_IO = 7,
  OSCP_STATUS_PANIC = 8,
} OscpStatus;

typedef enum OscpNorm {
  OSCP_NORM_L1 = 0,
  OSCP_NORM_L2 = 1,
  OSCP_NORM_LINF = 2,
  OSCP_NORM_ELLIPSOID = 3,
} OscpNorm;

/**
 * Opaque collection of equally shaped trajectories.
 */
typedef struct OscpDataset OscpDataset;

/**
 * Opaque fitted predictor.
 */
typedef struct OscpPredictor OscpPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *oscp_last_error_message(void);

/**
 * `ceil((1 - epsilon)(n + 1))`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OscpStatus oscp_quantile_index(double epsilon, size_t n, size_t *out);

/**
 * Loads a JSON or CSV dataset, chosen by file extension.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OscpStatus oscp_dataset_load(const char *path, struct OscpDataset **out);

/**
 * Builds a dataset from `count` time-major trajectories laid end to end.
 *
 * # Safety
 * `values` must hold `count * horizon * dims` doubles; `out` must be valid.
 */
enum OscpStatus oscp_dataset_from_values(const double *values,
                                         size_t count,
                                         size_t horizon,
                                         size_t dims,
                                         struct OscpDataset **out);

/**
 * Writes the number of series, the horizon `T` and the dimension `d`.
 *
 * # Safety
 * `dataset` must be a live handle; out pointers may be null to skip.
 */
enum OscpStatus oscp_dataset_shape(const struct OscpDataset *dataset,
                                   size_t *count,
                                   size_t *horizon,
                                   size_t *dims);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void oscp_dataset_free(struct OscpDataset *dataset);

/**
 * Fits a predictor. Returns `OSCP_STATUS_NODE_LIMIT` together with a
 * usable (not provably optimal) predictor when the solver budget runs out.
 *
 * # Safety
 * `dataset` must be a live handle and `out` a valid pointer.
 */
enum OscpStatus oscp_fit(const struct OscpDataset *dataset,
                         double epsilon,
                         enum OscpNorm norm,
                         double split_ratio,
                         uint64_t seed,
                         struct OscpPredictor **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OscpStatus oscp_predictor_from_json(const char *json, struct OscpPredictor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OscpStatus oscp_predictor_load(const char *path, struct OscpPredictor **out);

/**
 * # Safety
 * `predictor` must be a live handle and `path` a NUL-terminated string.
 */
enum OscpStatus oscp_predictor_save(const struct OscpPredictor *predictor, const char *path);

/**
 * Serializes the predictor. Release the string with [`oscp_string_free`].
 *
 * # Safety
 * `predictor` must be a live handle and `out` a valid pointer.
 */
enum OscpStatus oscp_predictor_to_json(const struct OscpPredictor *predictor, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void oscp_string_free(char *s);

/**
 * Writes `T` and `d`.
 *
 * # Safety
 * `predictor` must be a live handle; out pointers may be null to skip.
 */
enum OscpStatus oscp_predictor_shape(const struct OscpPredictor *predictor,
                                     size_t *horizon,
                                     size_t *dims);

/**
 * Calibrated inflation; may be negative.
 *
 * # Safety
 * `predictor` must be a live handle and `out` a valid pointer.
 */
enum OscpStatus oscp_predictor_inflation(const struct OscpPredictor *predictor, double *out);

/**
 * Region radii `max(0, inflation + r_t)`; `empty` (optional) receives the
 * clamp flags.
 *
 * # Safety
 * `radii` and, when non-null, `empty` must hold `len` elements.
 */
enum OscpStatus oscp_predictor_region_radii(const struct OscpPredictor *predictor,
                                            double *radii,
                                            bool *empty,
                                            size_t len);

/**
 * Nonconformity score of a residual trajectory of `len = T * d` values.
 *
 * # Safety
 * `residual` must hold `len` doubles and `out` must be valid.
 */
enum OscpStatus oscp_predictor_score(const struct OscpPredictor *predictor,
                                     const double *residual,
                                     size_t len,
                                     double *out);

/**
 * Whether `truth` lies in the regions centred on `nominal` at every step.
 *
 * # Safety
 * `nominal` and `truth` must hold `len = T * d` doubles; `out` must be valid.
 */
enum OscpStatus oscp_predictor_contains(const struct OscpPredictor *predictor,
                                        const double *nominal,
                                        const double *truth,
                                        size_t len,
                                        bool *out);

/**
 * # Safety
 * `predictor` must come from this library and not be used afterwards.
 */
void oscp_predictor_free(struct OscpPredictor *predictor);

/**
 * Optimal radii for a row-major `rows × horizon` matrix of normed
 * residuals. `selected` receives the `p1` covered rows in ascending order.
 * Returns `OSCP_STATUS_NODE_LIMIT` (with results written) when the search
 * budget runs out; pass 0 for the default budget.
 *
 * # Safety
 * `values` must hold `rows * horizon` doubles, `radii` `horizon` doubles,
 * `selected` `p1` entries; `cost` may be null.
 */
enum OscpStatus oscp_solve_radii(const double *values,
                                 size_t rows,
                                 size_t horizon,
                                 size_t p1,
                                 bool prune,
                                 uint64_t node_limit,
                                 double *radii,
                                 size_t *selected,
                                 double *cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OSCP_H */
