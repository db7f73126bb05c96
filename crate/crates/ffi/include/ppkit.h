#ifndef PPKIT_H
#define PPKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ppkit_status {
  PPKIT_STATUS_OK = 0,
  PPKIT_STATUS_NULL_POINTER = 1,
  PPKIT_STATUS_INVALID_WINDOW = 2,
  PPKIT_STATUS_INVALID_GRID = 3,
  PPKIT_STATUS_OUTSIDE_GRID = 4,
  PPKIT_STATUS_PARSE = 5,
  PPKIT_STATUS_INVALID_PARAMETER = 6,
  PPKIT_STATUS_DEGENERATE = 7,
  PPKIT_STATUS_COINCIDENT_POINTS = 8,
  PPKIT_STATUS_EMBEDDING = 9,
  PPKIT_STATUS_OVERFLOW = 10,
  PPKIT_STATUS_NON_FINITE = 11,
  PPKIT_STATUS_MCMC = 12,
  PPKIT_STATUS_CONFIG = 13,
  PPKIT_STATUS_IO = 14,
  PPKIT_STATUS_GRID_MISMATCH = 15,
  PPKIT_STATUS_LAYER = 16,
  PPKIT_STATUS_PANIC = 99,
} ppkit_status;

/**
 * Regular grid with a window mask.
 */
typedef struct PpkitGrid PpkitGrid;

/**
 * Simple point pattern bound to a window.
 */
typedef struct PpkitPattern PpkitPattern;

/**
 * Observation window.
 */
typedef struct PpkitWindow PpkitWindow;

typedef struct PpkitCsrResult {
  double statistic;
  double p_value;
  size_t n_sim;
} PpkitCsrResult;

/**
 * Exponential covariance components of the signed coregionalisation model.
 * `sign` is +1 or -1.
 */
typedef struct PpkitLmc {
  double sigma_w1;
  double phi_w1;
  double sigma_w2;
  double phi_w2;
  double sigma_w;
  double phi_w;
  int32_t sign;
} PpkitLmc;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next ppkit call on the same thread.
 */
const char *ppkit_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ppkit_version(void);

/**
 * Axis-aligned rectangular window.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ppkit_status ppkit_window_rectangle(double x0,
                                         double y0,
                                         double x1,
                                         double y1,
                                         struct PpkitWindow **out);

/**
 * Window from GeoJSON text. With `project` non-zero the coordinates are
 * lon/lat and are projected to km about the window centroid.
 *
 * # Safety
 * `geojson` must be a NUL-terminated string; `out` must be writable.
 */
enum ppkit_status ppkit_window_from_geojson(const char *geojson,
                                            bool project,
                                            struct PpkitWindow **out);

/**
 * # Safety
 * `w` must be NULL or a handle from this library not yet freed.
 */
void ppkit_window_free(struct PpkitWindow *w);

/**
 * # Safety
 * `w` must be a live window handle; `out` must be writable.
 */
enum ppkit_status ppkit_window_area(const struct PpkitWindow *w, double *out);

/**
 * `nx` by `ny` grid over the window's bounding box, masked by cell centre.
 *
 * # Safety
 * `w` must be a live window handle; `out` must be writable.
 */
enum ppkit_status ppkit_grid_covering(const struct PpkitWindow *w,
                                      size_t nx,
                                      size_t ny,
                                      struct PpkitGrid **out);

/**
 * # Safety
 * `g` must be NULL or a live grid handle.
 */
void ppkit_grid_free(struct PpkitGrid *g);

/**
 * Number of cells (masked or not); the length of per-cell buffers.
 *
 * # Safety
 * `g` must be a live grid handle; `out` must be writable.
 */
enum ppkit_status ppkit_grid_n_cells(const struct PpkitGrid *g, size_t *out);

/**
 * Pattern from coordinate arrays. Fails on points outside the window or
 * repeated locations.
 *
 * # Safety
 * `xs` and `ys` must point to `n` readable doubles; `w` must be live;
 * `out` must be writable.
 */
enum ppkit_status ppkit_pattern_new(const struct PpkitWindow *w,
                                    const double *xs,
                                    const double *ys,
                                    size_t n,
                                    struct PpkitPattern **out);

/**
 * # Safety
 * `p` must be NULL or a live pattern handle.
 */
void ppkit_pattern_free(struct PpkitPattern *p);

/**
 * # Safety
 * `p` must be a live pattern handle; `out` must be writable.
 */
enum ppkit_status ppkit_pattern_len(const struct PpkitPattern *p, size_t *out);

/**
 * Copies the coordinates into `xs` and `ys`, each of capacity `cap`
 * (at least the pattern length).
 *
 * # Safety
 * `xs` and `ys` must point to `cap` writable doubles.
 */
enum ppkit_status ppkit_pattern_coords(const struct PpkitPattern *p,
                                       double *xs,
                                       double *ys,
                                       size_t cap);

/**
 * Isotropic edge-correction weight for the pair `(sx, sy)`, `(ux, uy)`.
 *
 * # Safety
 * `w` must be live; `out` must be writable.
 */
enum ppkit_status ppkit_isotropic_correction(const struct PpkitWindow *w,
                                             double sx,
                                             double sy,
                                             double ux,
                                             double uy,
                                             double *out);

/**
 * Inhomogeneous K at `n_radii` radii given one intensity per point.
 *
 * # Safety
 * `intensity` must hold one double per point; `radii` and `out` must hold
 * `n_radii` doubles.
 */
enum ppkit_status ppkit_k_inhom(const struct PpkitPattern *p,
                                const double *intensity,
                                const double *radii,
                                size_t n_radii,
                                double *out);

/**
 * Inhomogeneous cross-K of two patterns on the same window.
 *
 * # Safety
 * Intensity arrays must match the pattern lengths; `radii` and `out` must
 * hold `n_radii` doubles.
 */
enum ppkit_status ppkit_cross_k_inhom(const struct PpkitPattern *p1,
                                      const struct PpkitPattern *p2,
                                      const double *intensity1,
                                      const double *intensity2,
                                      const double *radii,
                                      size_t n_radii,
                                      double *out);

/**
 * Monte-Carlo CSR test of the kernel-intensity K function against
 * `n_sim` Poisson patterns from the same kernel estimate. A non-positive
 * `bandwidth` selects the default rule.
 *
 * # Safety
 * `radii` must hold `n_radii` doubles; handles must be live.
 */
enum ppkit_status ppkit_csr_test(const struct PpkitPattern *p,
                                 const struct PpkitGrid *g,
                                 double bandwidth,
                                 size_t n_sim,
                                 const double *radii,
                                 size_t n_radii,
                                 uint64_t seed,
                                 struct PpkitCsrResult *out);

/**
 * Homogeneous univariate LGCP, `log Lambda = beta0 + e`, on `g`. The
 * latent field `e` is written to `field_out` (one value per grid cell)
 * when it is not NULL.
 *
 * # Safety
 * Handles must be live; `field_out` must be NULL or hold
 * `ppkit_grid_n_cells` doubles; `out` must be writable.
 */
enum ppkit_status ppkit_simulate_lgcp(const struct PpkitWindow *w,
                                      const struct PpkitGrid *g,
                                      double beta0,
                                      double sigma,
                                      double phi,
                                      uint64_t seed,
                                      double *field_out,
                                      struct PpkitPattern **out);

/**
 * `exp(-h / phi)`.
 */
double ppkit_exp_correlation(double h, double phi);

/**
 * Cross-correlation of the two log-intensities at distance `h`.
 *
 * # Safety
 * `lmc` must point to a valid struct; `out` must be writable.
 */
enum ppkit_status ppkit_cross_corr_e(double h, const struct PpkitLmc *lmc, double *out);

/**
 * Grid log-likelihood `sum n log(Lambda) - Lambda A` over `n` cells.
 *
 * # Safety
 * The three arrays must each hold `n` doubles; `out` must be writable.
 */
enum ppkit_status ppkit_riemann_loglik(const double *counts,
                                       const double *log_intensity,
                                       const double *areas,
                                       size_t n,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPKIT_H */
