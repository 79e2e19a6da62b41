#ifndef SE3REG_H
#define SE3REG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum Se3regLoss {
  SE3REG_LOSS_L_HALF = 0,
  SE3REG_LOSS_L1 = 1,
  SE3REG_LOSS_GEMAN_MCCLURE = 2,
} Se3regLoss;

typedef enum Se3regStatus {
  SE3REG_STATUS_OK = 0,
  SE3REG_STATUS_NULL_POINTER = 1,
  SE3REG_STATUS_INVALID_INPUT = 2,
  SE3REG_STATUS_PARSE = 3,
  SE3REG_STATUS_IO = 4,
  SE3REG_STATUS_UNSUPPORTED_FORMAT = 5,
  SE3REG_STATUS_TOO_FEW_CORRESPONDENCES = 6,
  SE3REG_STATUS_INDEX_OUT_OF_RANGE = 7,
  SE3REG_STATUS_DEGENERATE_GEOMETRY = 8,
  SE3REG_STATUS_DISCONNECTED_GRAPH = 9,
  SE3REG_STATUS_EMPTY_AFTER_PRUNE = 10,
  /**
   * The result was written but the solver hit `max_outer`.
   */
  SE3REG_STATUS_NOT_CONVERGED = 11,
  SE3REG_STATUS_PANIC = 12,
} Se3regStatus;

/**
 * Correspondence set.
 */
typedef struct Se3regCorrespondences Se3regCorrespondences;

typedef struct Se3regPointCloud Se3regPointCloud;

/**
 * View graph under construction or after estimation.
 */
typedef struct Se3regViewGraph Se3regViewGraph;

/**
 * Solver settings. For Geman-McClure, `mu` is the initial scale and the
 * schedule divides it by 2 every 4 outer iterations down to
 * `(1e-4 · sqrt(mu))²`; a non-positive `mu` selects the squared extent of
 * the input.
 */
typedef struct Se3regSolverOptions {
  enum Se3regLoss loss;
  double mu;
  uint32_t k_irls;
  double epsilon;
  uint32_t max_outer;
  bool extrinsic;
} Se3regSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread (empty after a
 * success). Valid until the next call into this library on the thread.
 */
const char *se3reg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *se3reg_version(void);

/**
 * Pairwise defaults: L½, K_IRLS = 2, ε = 1e-5, 100 outer iterations.
 */
struct Se3regSolverOptions se3reg_solver_options_pairwise(void);

/**
 * Multiview defaults: L½, K_IRLS = 3, ε = 1e-7, 100 outer iterations.
 */
struct Se3regSolverOptions se3reg_solver_options_multiview(void);

/**
 * Builds a correspondence set from `n` target points `p` and source points
 * `q` (each `n × 3`).
 *
 * # Safety
 * `p` and `q` must point to `3 n` readable doubles; `out` must be writable.
 */
enum Se3regStatus se3reg_correspondences_new(const double *p,
                                             const double *q,
                                             size_t n,
                                             struct Se3regCorrespondences **out);

/**
 * # Safety
 * `c` must be NULL or a live handle.
 */
size_t se3reg_correspondences_len(const struct Se3regCorrespondences *c);

/**
 * # Safety
 * `c` must be NULL or a handle not yet freed.
 */
void se3reg_correspondences_free(struct Se3regCorrespondences *c);

/**
 * Robust motion mapping `q` onto `p`, from the identity. Writes the motion
 * even when the status is `NotConverged`. `out_iterations` may be NULL.
 *
 * # Safety
 * `c` must be a live handle, `opts` readable, `out_motion` writable for 16
 * doubles.
 */
enum Se3regStatus se3reg_estimate_pairwise(const struct Se3regCorrespondences *c,
                                           const struct Se3regSolverOptions *opts,
                                           double *out_motion,
                                           uint32_t *out_iterations);

/**
 * Closed-form least-squares motion mapping `q` onto `p`.
 *
 * # Safety
 * `c` must be a live handle and `out_motion` writable for 16 doubles.
 */
enum Se3regStatus se3reg_umeyama(const struct Se3regCorrespondences *c, double *out_motion);

/**
 * Exponential map of the twist `(ω, u)`.
 *
 * # Safety
 * `twist` must be readable for 6 doubles, `out_motion` writable for 16.
 */
enum Se3regStatus se3reg_exp(const double *twist, double *out_motion);

/**
 * Logarithm map, rotation angle in `[0, π]`.
 *
 * # Safety
 * `motion` must be readable for 16 doubles, `out_twist` writable for 6.
 */
enum Se3regStatus se3reg_log(const double *motion, double *out_twist);

/**
 * Empty view graph over `n` scans, all motions at the identity.
 *
 * # Safety
 * `out` must be writable.
 */
enum Se3regStatus se3reg_view_graph_new(size_t n, struct Se3regViewGraph **out);

/**
 * # Safety
 * `g` must be NULL or a handle not yet freed.
 */
void se3reg_view_graph_free(struct Se3regViewGraph *g);

/**
 * Sets the scan-to-global motion of scan `i`.
 *
 * # Safety
 * `g` must be a live handle and `motion` readable for 16 doubles.
 */
enum Se3regStatus se3reg_view_graph_set_motion(struct Se3regViewGraph *g,
                                               size_t i,
                                               const double *motion);

/**
 * # Safety
 * `g` must be a live handle and `out_motion` writable for 16 doubles.
 */
enum Se3regStatus se3reg_view_graph_get_motion(const struct Se3regViewGraph *g,
                                               size_t i,
                                               double *out_motion);

/**
 * Adds edge `(i, j)`: `p` points live in scan `i`, `q` points in scan
 * `j`. The correspondences are copied.
 *
 * # Safety
 * `g` and `c` must be live handles.
 */
enum Se3regStatus se3reg_view_graph_add_edge(struct Se3regViewGraph *g,
                                             size_t i,
                                             size_t j,
                                             const struct Se3regCorrespondences *c);

/**
 * Joint multiview registration. On success the graph's motions are
 * replaced by the estimate, gauge-fixed so scan 0 is the identity. They
 * are also replaced when the status is `NotConverged`.
 *
 * # Safety
 * `g` must be a live handle and `opts` readable; `out_iterations` may be
 * NULL.
 */
enum Se3regStatus se3reg_estimate_multiview(struct Se3regViewGraph *g,
                                            const struct Se3regSolverOptions *opts,
                                            uint32_t *out_iterations);

/**
 * Reads an ascii or binary little-endian PLY file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum Se3regStatus se3reg_point_cloud_read_ply(const char *path, struct Se3regPointCloud **out);

/**
 * # Safety
 * `c` must be NULL or a live handle.
 */
size_t se3reg_point_cloud_len(const struct Se3regPointCloud *c);

/**
 * Copies the points into `out_xyz` (`capacity` points of 3 doubles).
 *
 * # Safety
 * `c` must be a live handle and `out_xyz` writable for `3 capacity`
 * doubles.
 */
enum Se3regStatus se3reg_point_cloud_points(const struct Se3regPointCloud *c,
                                            double *out_xyz,
                                            size_t capacity);

/**
 * # Safety
 * `c` must be NULL or a handle not yet freed.
 */
void se3reg_point_cloud_free(struct Se3regPointCloud *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SE3REG_H */
