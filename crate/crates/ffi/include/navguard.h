#ifndef NAVGUARD_H
#define NAVGUARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NgStatus {
  NG_STATUS_OK = 0,
  NG_STATUS_NULL_POINTER = 1,
  NG_STATUS_INVALID_ARGUMENT = 2,
  NG_STATUS_IO = 3,
  NG_STATUS_SOLVER = 4,
  NG_STATUS_PANIC = 5,
} NgStatus;

typedef struct NgMpc NgMpc;

typedef struct NgPolicy NgPolicy;

typedef struct NgScene NgScene;

/**
 * Locomotion controller parameters; see `ng_mpc_default_config`.
 */
typedef struct NgMpcConfig {
  double g;
  double l;
  size_t horizon;
  double dt;
  double u_max;
  double w_r;
  double w_phi;
  double w_u;
  double terminal_scale;
  double wheel_radius;
  double track;
  size_t max_iter;
  double tol;
} NgMpcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * The pointer is valid until the next failing call on the same thread.
 */
const char *ng_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ng_version(void);

/**
 * Loads a scene JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NgStatus ng_scene_load(const char *path, struct NgScene **out_scene);

/**
 * Parses a scene from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NgStatus ng_scene_from_json(const char *json, struct NgScene **out_scene);

/**
 * # Safety
 * `scene` must come from `ng_scene_load`/`ng_scene_from_json` and not be used afterwards. Null is ignored.
 */
void ng_scene_free(struct NgScene *scene);

/**
 * # Safety
 * `scene` must be a live handle.
 */
size_t ng_scene_obstacle_count(const struct NgScene *scene);

/**
 * Distance from a point to the nearest obstacle or wall; negative inside.
 *
 * # Safety
 * `scene` must be a live handle and `out_distance` valid.
 */
enum NgStatus ng_scene_point_clearance(const struct NgScene *scene,
                                       double x,
                                       double y,
                                       double *out_distance);

/**
 * First hit along a ray. `out_obstacle` receives the obstacle index, or -1
 * for a wall or no hit within range (then `out_distance` is the range).
 *
 * # Safety
 * `scene` must be a live handle and the out pointers valid.
 */
enum NgStatus ng_scene_raycast(const struct NgScene *scene,
                               double ox,
                               double oy,
                               double dx,
                               double dy,
                               double *out_distance,
                               int64_t *out_obstacle);

/**
 * `1 - (|ax| + |atheta|)`, or `crash_reward` when `collided` is true.
 */
double ng_compute_reward(double ax, double atheta, bool collided, double crash_reward);

/**
 * Wheel angular velocities in rad/s for a base velocity and yaw rate.
 *
 * # Safety
 * Out pointers must be valid.
 */
enum NgStatus ng_differential_drive(double v_base,
                                    double v_theta,
                                    double wheel_radius,
                                    double track,
                                    double *out_left,
                                    double *out_right);

struct NgMpcConfig ng_mpc_default_config(void);

/**
 * # Safety
 * `config` may be null for defaults; `out_mpc` must be valid.
 */
enum NgStatus ng_mpc_new(const struct NgMpcConfig *config, struct NgMpc **out_mpc);

/**
 * One warm-started solve. Writes the planned base velocity after the
 * first interval and the solver iteration count.
 *
 * # Safety
 * `mpc` must be a live handle; out pointers valid (`out_iterations` may be null).
 */
enum NgStatus ng_mpc_step(struct NgMpc *mpc,
                          double r,
                          double phi,
                          double r_dot,
                          double phi_dot,
                          double v_ref,
                          double *out_velocity,
                          size_t *out_iterations);

/**
 * Drops the warm start.
 *
 * # Safety
 * `mpc` must be a live handle or null.
 */
void ng_mpc_reset(struct NgMpc *mpc);

/**
 * # Safety
 * `mpc` must come from `ng_mpc_new` and not be used afterwards. Null is ignored.
 */
void ng_mpc_free(struct NgMpc *mpc);

/**
 * Observation length the policy expects.
 */
size_t ng_policy_obs_dim(void);

/**
 * Loads a policy checkpoint written by `navguard train-policy`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_policy` valid.
 */
enum NgStatus ng_policy_load(const char *path, struct NgPolicy **out_policy);

/**
 * Deterministic correction for one observation of `ng_policy_obs_dim()` floats.
 *
 * # Safety
 * `policy` must be a live handle, `obs` must point to `obs_len` floats and
 * `out_action` to 2 doubles.
 */
enum NgStatus ng_policy_act(const struct NgPolicy *policy,
                            const float *obs,
                            size_t obs_len,
                            double *out_action);

/**
 * # Safety
 * `policy` must come from `ng_policy_load` and not be used afterwards. Null is ignored.
 */
void ng_policy_free(struct NgPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAVGUARD_H */
