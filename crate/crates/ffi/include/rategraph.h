#ifndef RATEGRAPH_H
#define RATEGRAPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Side of the bipartite graph a node id refers to.
 */
typedef enum RgNodeKind {
  RG_NODE_KIND_USER = 0,
  RG_NODE_KIND_BUSINESS = 1,
} RgNodeKind;

/**
 * Result codes of every fallible call.
 */
typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_NULL_POINTER = 1,
  RG_STATUS_INVALID_ARGUMENT = 2,
  RG_STATUS_IO = 3,
  RG_STATUS_PARSE = 4,
  RG_STATUS_LOOKUP = 5,
  RG_STATUS_CONSTRUCTION = 6,
  RG_STATUS_CONVERGENCE = 7,
  RG_STATUS_SHAPE = 8,
  RG_STATUS_STAT = 9,
  RG_STATUS_CONFIG = 10,
  RG_STATUS_PANIC = 11,
} RgStatus;

/**
 * Immutable review graph, optionally with the string ids it was read with.
 */
typedef struct RgGraph RgGraph;

/**
 * A trained model together with its feature standardizer.
 */
typedef struct RgModel RgModel;

/**
 * Metrics of one prediction vector.
 */
typedef struct RgMetrics {
  double rmse;
  double relerror;
  double r2;
} RgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rg_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *rg_last_error(void);

/**
 * Builds a graph from parallel edge arrays of length `n`.
 *
 * # Safety
 * Each array must hold `n` readable elements; `out` must be writable.
 */
enum RgStatus rg_graph_from_edges(const uint32_t *users,
                                  const uint32_t *businesses,
                                  const uint8_t *stars,
                                  const int64_t *timestamps,
                                  uintptr_t n,
                                  struct RgGraph **out);

/**
 * Reads an edge interchange CSV (`user_id,business_id,stars,unix_ts`).
 * String ids are interned in order of first appearance.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RgStatus rg_graph_from_csv(const char *path, struct RgGraph **out);

/**
 * Releases a graph. NULL is ignored.
 *
 * # Safety
 * `g` must come from an `rg_graph_*` constructor and not be freed twice.
 */
void rg_graph_free(struct RgGraph *g);

/**
 * Numbers of users, businesses and edges present in the graph. Any output
 * pointer may be NULL.
 *
 * # Safety
 * `g` must be a live graph handle.
 */
enum RgStatus rg_graph_counts(const struct RgGraph *g,
                              uintptr_t *n_users,
                              uintptr_t *n_businesses,
                              uintptr_t *n_edges);

/**
 * Degree of one node.
 *
 * # Safety
 * `g` must be a live graph handle; `out` must be writable.
 */
enum RgStatus rg_graph_degree(const struct RgGraph *g,
                              enum RgNodeKind kind,
                              uint32_t id,
                              uintptr_t *out);

/**
 * Integer id of a string id from the CSV the graph was read from.
 *
 * # Safety
 * `g` must be a live graph handle, `name` NUL-terminated, `out` writable.
 */
enum RgStatus rg_graph_lookup(const struct RgGraph *g,
                              enum RgNodeKind kind,
                              const char *name,
                              uint32_t *out);

/**
 * Number of columns written per pair by [`rg_featurize`].
 */
uintptr_t rg_n_features(void);

/**
 * Raw features of `n` (user, business) pairs on graph `g`, written
 * row-major into `out`, which must hold `n * rg_n_features()` doubles.
 *
 * # Safety
 * Arrays must hold the stated number of elements.
 */
enum RgStatus rg_featurize(const struct RgGraph *g,
                           const uint32_t *users,
                           const uint32_t *businesses,
                           uintptr_t n,
                           double *out);

/**
 * Loads a model file written by the `train` stage.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum RgStatus rg_model_load(const char *path, struct RgModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `m` must come from [`rg_model_load`] and not be freed twice.
 */
void rg_model_free(struct RgModel *m);

/**
 * Expected column count, or 0 for models that ignore their input.
 *
 * # Safety
 * `m` must be a live model handle; `out` must be writable.
 */
enum RgStatus rg_model_input_width(const struct RgModel *m, uintptr_t *out);

/**
 * Predicts ratings for `rows` raw (unstandardized) feature rows of `cols`
 * columns each. `out` must hold `rows` doubles.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` `rows` doubles.
 */
enum RgStatus rg_model_predict(const struct RgModel *m,
                               const double *x,
                               uintptr_t rows,
                               uintptr_t cols,
                               double *out);

/**
 * RMSE, relative error and R² of `n` predictions.
 *
 * # Safety
 * `pred` and `truth` must hold `n` doubles; `out` must be writable.
 */
enum RgStatus rg_metrics(const double *pred,
                         const double *truth,
                         uintptr_t n,
                         struct RgMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATEGRAPH_H */
