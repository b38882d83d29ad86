#ifndef MOLLIFY_H
#define MOLLIFY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MlfStatus {
  MLF_STATUS_OK = 0,
  MLF_STATUS_NULL_POINTER = 1,
  MLF_STATUS_INVALID_ARGUMENT = 2,
  MLF_STATUS_CONFIG = 3,
  MLF_STATUS_NUMERICAL = 4,
  MLF_STATUS_PANIC = 5,
} MlfStatus;

/**
 * Per-node curvature summary of a metric.
 */
typedef struct MlfCurvature MlfCurvature;

/**
 * A model geometry with its atlas.
 */
typedef struct MlfGeometry MlfGeometry;

/**
 * A metric sampled on a chart lattice.
 */
typedef struct MlfMetric MlfMetric;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, empty after a success. The
 * pointer stays valid until the next `mlf_*` call on the same thread.
 */
const char *mlf_last_error(void);

/**
 * Parses a geometry such as `sphere:R=1` into a new handle.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MlfStatus mlf_geometry_parse(const char *spec, struct MlfGeometry **out);

/**
 * # Safety
 * `geometry` must come from [`mlf_geometry_parse`] and not be freed twice.
 */
void mlf_geometry_free(struct MlfGeometry *geometry);

/**
 * Dimension and number of charts.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MlfStatus mlf_geometry_shape(const struct MlfGeometry *geometry, size_t *dim, size_t *charts);

/**
 * Samples chart `chart` of the geometry with `m` points per axis.
 *
 * # Safety
 * `geometry` must be a live handle and `out` a valid pointer.
 */
enum MlfStatus mlf_metric_sample(const struct MlfGeometry *geometry,
                                 size_t chart,
                                 size_t m,
                                 struct MlfMetric **out);

/**
 * The globally mollified metric `g^[t]` in chart `chart`, assembled from
 * every chart sampled with `m` points per axis.
 *
 * # Safety
 * `geometry` must be a live handle and `out` a valid pointer.
 */
enum MlfStatus mlf_metric_assemble(const struct MlfGeometry *geometry,
                                   size_t m,
                                   double t,
                                   size_t chart,
                                   struct MlfMetric **out);

/**
 * Chart-wise convolution `P_t g` of a single sampled metric.
 *
 * # Safety
 * `metric` must be a live handle and `out` a valid pointer.
 */
enum MlfStatus mlf_metric_mollify(const struct MlfMetric *metric, double t, struct MlfMetric **out);

/**
 * # Safety
 * `metric` must come from this library and not be freed twice.
 */
void mlf_metric_free(struct MlfMetric *metric);

/**
 * Number of lattice nodes and how many of them are valid.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MlfStatus mlf_metric_nodes(const struct MlfMetric *metric, size_t *total, size_t *valid);

/**
 * Copies the `n×n` metric matrix at `node` into `out` (row-major, `n²`
 * doubles).
 *
 * # Safety
 * `out` must hold `n²` doubles.
 */
enum MlfStatus mlf_metric_matrix(const struct MlfMetric *metric, size_t node, double *out);

/**
 * Smallest `Q` with eigenvalues in `[e^{-2Q}, e^{2Q}]` on the valid nodes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MlfStatus mlf_metric_n0(const struct MlfMetric *metric, double *q);

/**
 * Curvature summary with plane sampling seeded by `seed`.
 *
 * # Safety
 * `metric` must be a live handle and `out` a valid pointer.
 */
enum MlfStatus mlf_curvature_compute(const struct MlfMetric *metric,
                                     uint64_t seed,
                                     struct MlfCurvature **out);

/**
 * # Safety
 * `curvature` must come from this library and not be freed twice.
 */
void mlf_curvature_free(struct MlfCurvature *curvature);

/**
 * Minimum and maximum sectional curvature over all valid nodes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MlfStatus mlf_curvature_range(const struct MlfCurvature *curvature,
                                   double *min_sec,
                                   double *max_sec);

/**
 * Per-node values; NaN with `valid = false` outside the curvature mask.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MlfStatus mlf_curvature_node(const struct MlfCurvature *curvature,
                                  size_t node,
                                  double *min_sec,
                                  double *max_sec,
                                  double *scalar,
                                  bool *valid);

/**
 * Runs a lab command (`curvature`, `deviation`, `norms`, `lemmas`,
 * `cover-check`) with a `key = value` configuration. On success `*csv` is
 * the CSV body (or NULL when the command has none) and `*summary` the
 * summary; both are released with [`mlf_string_free`]. `*violation` is set
 * when a checked inequality failed.
 *
 * # Safety
 * Strings must be NUL-terminated; output pointers must be valid.
 */
enum MlfStatus mlf_run(const char *command,
                       const char *config,
                       char **csv,
                       char **summary,
                       bool *violation);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void mlf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOLLIFY_H */
