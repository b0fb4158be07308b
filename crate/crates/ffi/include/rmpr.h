#ifndef RMPR_H
#define RMPR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RmprStatus {
  RMPR_STATUS_OK = 0,
  RMPR_STATUS_NULL_POINTER = 1,
  RMPR_STATUS_INVALID_ARGUMENT = 2,
  RMPR_STATUS_DIMENSION = 3,
  RMPR_STATUS_TERMINATED = 4,
  RMPR_STATUS_CONFIG = 5,
  RMPR_STATUS_CHECKPOINT = 6,
  RMPR_STATUS_IO = 7,
  RMPR_STATUS_EVALUATION = 8,
  RMPR_STATUS_BUFFER_TOO_SMALL = 9,
  RMPR_STATUS_PANIC = 99,
} RmprStatus;

typedef enum RmprLayout {
  RMPR_LAYOUT_RESIDUAL = 0,
  RMPR_LAYOUT_VANILLA = 1,
  RMPR_LAYOUT_BASELINE_ONLY = 2,
  RMPR_LAYOUT_BASELINE_WITH_LIMITS = 3,
} RmprLayout;

typedef struct RmprAgent RmprAgent;

typedef struct RmprConfig RmprConfig;

typedef struct RmprVae RmprVae;

typedef struct RmprWorld RmprWorld;

/**
 * Outcome of one control step.
 */
typedef struct RmprStep {
  double reward;
  double r_collide;
  double r_goal;
  double r_dist;
  double r_ctrl;
  double distance;
  double min_clearance;
  bool collided;
  bool at_goal;
  bool terminated;
  /**
   * 0 running, 1 collision, 2 step limit.
   */
  int32_t cause;
} RmprStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, including the
 * terminating NUL; 0 when there is none.
 */
size_t rmpr_last_error_length(void);

/**
 * Copy the last error message into `buf` as a NUL-terminated string,
 * truncating if needed. Returns the number of bytes written without the NUL.
 *
 * # Safety
 * `buf` must point to at least `capacity` writable bytes.
 */
size_t rmpr_last_error_message(char *buf, size_t capacity);

void rmpr_clear_error(void);

/**
 * Default experiment configuration.
 */
struct RmprConfig *rmpr_config_default(void);

/**
 * Parse a TOML configuration; fields left out take their defaults.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RmprStatus rmpr_config_from_toml(const char *toml, struct RmprConfig **out);

/**
 * Load a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RmprStatus rmpr_config_load(const char *path, struct RmprConfig **out);

/**
 * Override the obstacle count of sampled scenes (1 to 3).
 *
 * # Safety
 * `config` must come from `rmpr_config_*`.
 */
enum RmprStatus rmpr_config_set_obstacles(struct RmprConfig *config, size_t n_obstacles);

/**
 * # Safety
 * `config` must come from `rmpr_config_*` and not be used afterwards.
 */
void rmpr_config_free(struct RmprConfig *config);

/**
 * Sample a scene from `seed` and build its world. The configuration is
 * copied, so `config` may be freed afterwards.
 *
 * # Safety
 * `config` must come from `rmpr_config_*` and `out` be a valid pointer.
 */
enum RmprStatus rmpr_world_new(const struct RmprConfig *config,
                               enum RmprLayout layout,
                               uint64_t seed,
                               struct RmprWorld **out);

/**
 * Start a new episode on a scene sampled from `seed`.
 *
 * # Safety
 * `world` must come from `rmpr_world_new`.
 */
enum RmprStatus rmpr_world_reset(struct RmprWorld *world, uint64_t seed);

/**
 * # Safety
 * `world` must come from `rmpr_world_new` and not be used afterwards.
 */
void rmpr_world_free(struct RmprWorld *world);

/**
 * Joint count of the arm, or 0 for a null handle.
 *
 * # Safety
 * `world` must be null or come from `rmpr_world_new`.
 */
size_t rmpr_world_dof(const struct RmprWorld *world);

/**
 * Task-space dimension of the end effector, or 0 for a null handle.
 *
 * # Safety
 * `world` must be null or come from `rmpr_world_new`.
 */
size_t rmpr_world_task_dim(const struct RmprWorld *world);

/**
 * Advance one control period under `action` (one value per joint).
 *
 * # Safety
 * `action` must hold `len` doubles; `out` may be null.
 */
enum RmprStatus rmpr_world_step(struct RmprWorld *world,
                                const double *action,
                                size_t len,
                                struct RmprStep *out);

/**
 * Copy `[q, qdot, x, xdot]` into `out`; `out_len` receives the length.
 *
 * # Safety
 * `out` must hold `capacity` doubles; `out_len` may be null.
 */
enum RmprStatus rmpr_world_state(const struct RmprWorld *world,
                                 double *out,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Goal position of the current scene.
 *
 * # Safety
 * `out` must hold `capacity` doubles; `out_len` may be null.
 */
enum RmprStatus rmpr_world_goal(const struct RmprWorld *world,
                                double *out,
                                size_t capacity,
                                size_t *out_len);

/**
 * Render the current state as a channel-major float image.
 *
 * # Safety
 * `out` must hold `capacity` floats; `channels`, `height`, `width` and
 * `out_len` may each be null.
 */
enum RmprStatus rmpr_world_render(const struct RmprWorld *world,
                                  float *out,
                                  size_t capacity,
                                  size_t *out_len,
                                  size_t *channels,
                                  size_t *height,
                                  size_t *width);

/**
 * Full agent state: kinematic state followed by the latent code, taken from
 * `vae` when given and from ground-truth obstacle features otherwise.
 *
 * # Safety
 * `vae` may be null; `out` must hold `capacity` doubles.
 */
enum RmprStatus rmpr_world_agent_state(const struct RmprWorld *world,
                                       const struct RmprVae *vae,
                                       double *out,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * Load a VAE checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RmprStatus rmpr_vae_load(const char *path, struct RmprVae **out);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `vae` must be null or come from `rmpr_vae_load`.
 */
size_t rmpr_vae_latent_dim(const struct RmprVae *vae);

/**
 * # Safety
 * `vae` must come from `rmpr_vae_load` and not be used afterwards.
 */
void rmpr_vae_free(struct RmprVae *vae);

/**
 * Load a trained agent; its training hyperparameters come from `config`.
 *
 * # Safety
 * `config` must come from `rmpr_config_*`, `path` be NUL-terminated and
 * `out` a valid pointer.
 */
enum RmprStatus rmpr_agent_load(const struct RmprConfig *config,
                                const char *path,
                                struct RmprAgent **out);

/**
 * Deterministic action of the trained actor for `state`.
 *
 * # Safety
 * `state` must hold `len` doubles and `out` `capacity` doubles.
 */
enum RmprStatus rmpr_agent_act(const struct RmprAgent *agent,
                               const double *state,
                               size_t len,
                               double *out,
                               size_t capacity,
                               size_t *out_len);

/**
 * # Safety
 * `agent` must come from `rmpr_agent_load` and not be used afterwards.
 */
void rmpr_agent_free(struct RmprAgent *agent);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMPR_H */
