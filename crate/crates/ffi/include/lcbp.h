#ifndef LCBP_H
#define LCBP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcbpStatus {
  LCBP_STATUS_OK = 0,
  LCBP_STATUS_NULL_POINTER = 1,
  LCBP_STATUS_INVALID_ARGUMENT = 2,
  LCBP_STATUS_PARSE = 3,
  LCBP_STATUS_IO = 4,
  LCBP_STATUS_CAPACITY = 5,
  LCBP_STATUS_DEGENERATE = 6,
  LCBP_STATUS_GENERATION = 7,
  LCBP_STATUS_PANIC = 8,
} LcbpStatus;

typedef enum LcbpCavityInit {
  LCBP_CAVITY_INIT_UNIFORM = 0,
  LCBP_CAVITY_INIT_BP = 1,
  LCBP_CAVITY_INIT_MF = 2,
  LCBP_CAVITY_INIT_EXACT = 3,
} LcbpCavityInit;

typedef enum LcbpMethod {
  LCBP_METHOD_MF = 0,
  LCBP_METHOD_BP = 1,
  LCBP_METHOD_LCBP = 2,
  LCBP_METHOD_LCBP_CUM = 3,
  LCBP_METHOD_LCBP_CUM_LIN = 4,
  LCBP_METHOD_EXACT = 5,
} LcbpMethod;

/**
 * Opaque factor graph.
 */
typedef struct LcbpGraph LcbpGraph;

/**
 * Opaque inference result: one marginal per variable plus convergence data.
 */
typedef struct LcbpResult LcbpResult;

typedef struct LcbpRunOptions {
  double tol;
  size_t max_iter;
  double damping;
  enum LcbpCavityInit cavity_init;
  uint64_t seed;
} LcbpRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lcbp_last_error(void);

/**
 * Reads a factor graph file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LcbpStatus lcbp_graph_read(const char *path, struct LcbpGraph **out);

/**
 * Parses a factor graph from text in the file format.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LcbpStatus lcbp_graph_from_string(const char *text, struct LcbpGraph **out);

/**
 * Writes a graph in the file format.
 *
 * # Safety
 * `g` must come from this library and `path` be a NUL-terminated string.
 */
enum LcbpStatus lcbp_graph_write(const struct LcbpGraph *g, const char *path);

/**
 * # Safety
 * `g` must be NULL or a graph from this library not yet freed.
 */
void lcbp_graph_free(struct LcbpGraph *g);

/**
 * Number of variables, 0 for NULL.
 *
 * # Safety
 * `g` must be NULL or a live graph.
 */
size_t lcbp_graph_num_vars(const struct LcbpGraph *g);

/**
 * Number of factors, 0 for NULL.
 *
 * # Safety
 * `g` must be NULL or a live graph.
 */
size_t lcbp_graph_num_factors(const struct LcbpGraph *g);

/**
 * # Safety
 * `g` must be a live graph and `out` a valid pointer.
 */
enum LcbpStatus lcbp_graph_cardinality(const struct LcbpGraph *g, size_t var, size_t *out);

/**
 * Random d-regular binary spin model as a factor graph.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LcbpStatus lcbp_gen_regular(size_t n,
                                 size_t d,
                                 double beta,
                                 double theta,
                                 bool attractive,
                                 uint64_t seed,
                                 struct LcbpGraph **out);

/**
 * Random graph of `m` binary factors over `k` variables each.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LcbpStatus lcbp_gen_kfactor(size_t n,
                                 size_t m,
                                 size_t k,
                                 double beta,
                                 uint64_t seed,
                                 struct LcbpGraph **out);

struct LcbpRunOptions lcbp_run_options_default(void);

/**
 * Runs one method. `opts` may be NULL for the defaults.
 *
 * # Safety
 * `g` must be a live graph, `opts` NULL or valid, `out` a valid pointer.
 */
enum LcbpStatus lcbp_run(const struct LcbpGraph *g,
                         enum LcbpMethod method,
                         const struct LcbpRunOptions *opts,
                         struct LcbpResult **out);

/**
 * Exact single-variable marginals.
 *
 * # Safety
 * `g` must be a live graph and `out` a valid pointer.
 */
enum LcbpStatus lcbp_exact(const struct LcbpGraph *g, struct LcbpResult **out);

/**
 * # Safety
 * `r` must be NULL or a live result.
 */
bool lcbp_result_converged(const struct LcbpResult *r);

/**
 * # Safety
 * `r` must be NULL or a live result.
 */
size_t lcbp_result_iterations(const struct LcbpResult *r);

/**
 * # Safety
 * `r` must be NULL or a live result.
 */
size_t lcbp_result_num_vars(const struct LcbpResult *r);

/**
 * Copies the marginal of `var` into `buf`, which must hold at least the
 * variable's cardinality. `len` is the capacity of `buf`.
 *
 * # Safety
 * `r` must be a live result and `buf` valid for `len` writes.
 */
enum LcbpStatus lcbp_result_marginal(const struct LcbpResult *r,
                                     size_t var,
                                     double *buf,
                                     size_t len);

/**
 * # Safety
 * `r` must be NULL or a result from this library not yet freed.
 */
void lcbp_result_free(struct LcbpResult *r);

/**
 * Largest absolute difference between the marginals of two results.
 *
 * # Safety
 * `a` and `b` must be live results and `out` a valid pointer.
 */
enum LcbpStatus lcbp_max_linf_error(const struct LcbpResult *a,
                                    const struct LcbpResult *b,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCBP_H */
