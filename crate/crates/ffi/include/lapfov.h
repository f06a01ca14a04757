/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LAPFOV_H
#define LAPFOV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  LAPFOV_STATUS_OK = 0,
  LAPFOV_STATUS_NULL_POINTER = 1,
  LAPFOV_STATUS_INVALID_ARGUMENT = 2,
  LAPFOV_STATUS_CONFIG_ERROR = 3,
  LAPFOV_STATUS_INVARIANT_VIOLATION = 4,
  LAPFOV_STATUS_ILL_CONDITIONED = 5,
  LAPFOV_STATUS_RUNTIME_ERROR = 6,
  LAPFOV_STATUS_BUFFER_TOO_SMALL = 7,
  LAPFOV_STATUS_PANIC = 8,
} LapfovStatus;

/**
 * Opaque closed-loop simulation.
 */
typedef struct LapfovSimulation LapfovSimulation;

typedef struct {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} LapfovIntrinsics;

/**
 * Per-step output. Error fields are NaN when `status` is tool-lost.
 */
typedef struct {
  uint64_t step;
  double t;
  double e_p[2];
  double e_d;
  double e_r[2];
  double theta_star;
  double v;
  /**
   * Base-frame twist `[v_x, v_y, v_z, w_x, w_y, w_z]` after limiting.
   */
  double command[6];
  double camera[12];
  double misorientation;
  /**
   * 0 ok, 1 tool lost, 2 ill-conditioned, 3 MRC failed, 4 perception failed.
   */
  uint32_t status;
} LapfovStep;

typedef struct {
  double ks[4];
  double kr[2];
  double k_theta;
  double k_d;
} LapfovGains;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated, into `buf`.
 * `len` receives the message length excluding the terminator.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null; `len` must be valid or null.
 */
LapfovStatus lapfov_last_error(char *buf, size_t cap, size_t *len);

/**
 * Default intrinsics: 320×240, focal 260 px, centred principal point.
 */
LapfovIntrinsics lapfov_default_intrinsics(void);

/**
 * Creates a simulation from a TOML scenario; a null `toml` uses the defaults.
 *
 * # Safety
 * `toml` must be null or a NUL-terminated string; `out` must be valid.
 */
LapfovStatus lapfov_simulation_new(const char *toml, LapfovSimulation **out);

/**
 * # Safety
 * `sim` must come from [`lapfov_simulation_new`] and not be used afterwards.
 */
void lapfov_simulation_free(LapfovSimulation *sim);

/**
 * Advances one control period. `out` may be null.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be null or valid.
 */
LapfovStatus lapfov_simulation_step(LapfovSimulation *sim, LapfovStep *out);

/**
 * Current camera pose.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be valid for 12 doubles.
 */
LapfovStatus lapfov_simulation_camera(const LapfovSimulation *sim, double (*out)[12]);

/**
 * Moves the tool tip towards a world point, rate limited, overriding the script.
 *
 * # Safety
 * `sim` must be a live handle.
 */
LapfovStatus lapfov_simulation_set_tool_goal(LapfovSimulation *sim, double x, double y, double z);

/**
 * # Safety
 * `sim` must be a live handle.
 */
LapfovStatus lapfov_simulation_set_mrc(LapfovSimulation *sim, bool on);

/**
 * # Safety
 * `sim` and `gains` must be valid.
 */
LapfovStatus lapfov_simulation_set_gains(LapfovSimulation *sim, const LapfovGains *gains);

/**
 * Linear-velocity image Jacobian (2×3, row-major) of a point at pixel `p` and depth `d`.
 *
 * # Safety
 * `k` must be valid; `out` must be valid for 6 doubles.
 */
LapfovStatus lapfov_image_jacobian(double px,
                                   double py,
                                   double depth,
                                   const LapfovIntrinsics *k,
                                   double (*out)[6]);

/**
 * Shaft deviation from the trocar in the camera's x-y plane, mm.
 *
 * # Safety
 * `camera` must be valid for 12 doubles, `out` for 2.
 */
LapfovStatus lapfov_rcm_error(double trocar_x,
                              double trocar_y,
                              double trocar_z,
                              const double (*camera)[12],
                              double (*out)[2]);

/**
 * Roll of `camera` about the reference optical axis, rad.
 *
 * # Safety
 * `camera` and `reference` must be valid for 12 doubles; `out` must be valid.
 */
LapfovStatus lapfov_misorientation(const double (*camera)[12],
                                   const double (*reference)[12],
                                   double *out);

/**
 * `V = ½(‖e_r‖² + ‖e_p‖² + e_d²)`.
 */
double lapfov_lyapunov(double ep_x, double ep_y, double e_d, double er_x, double er_y);

/**
 * Frame pairs `(i, j)` sampled for a sequence of `n` frames, written as
 * `out[2k] = i, out[2k+1] = j`. `count` always receives the number of pairs.
 *
 * # Safety
 * `out` must be null or valid for `cap` entries; `count` must be valid.
 */
LapfovStatus lapfov_hierarchical_pairs(size_t n, uint32_t *out, size_t cap, size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAPFOV_H */
