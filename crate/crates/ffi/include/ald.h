#ifndef ALD_H
#define ALD_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AldEnvKind {
  ALD_ENV_KIND_I_MAZE = 0,
  ALD_ENV_KIND_META_FETCH = 1,
} AldEnvKind;

typedef enum AldStatus {
  ALD_STATUS_OK = 0,
  ALD_STATUS_NULL_POINTER = 1,
  ALD_STATUS_INVALID_ARGUMENT = 2,
  ALD_STATUS_BUFFER_TOO_SMALL = 3,
  ALD_STATUS_EPISODE_DONE = 4,
  ALD_STATUS_IO = 5,
  ALD_STATUS_CHECKPOINT = 6,
  ALD_STATUS_NUMERIC = 7,
  ALD_STATUS_PANIC = 8,
} AldStatus;

// Opaque environment handle.
typedef struct AldEnv AldEnv;

// Opaque handle to a loaded acting network and its recurrent state.
typedef struct AldPolicy AldPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `len` bytes. Returns the untruncated length in bytes,
// excluding the terminator; 0 after a successful call.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t ald_last_error(char *buf, size_t len);

// Creates an environment. `kind` is an [`AldEnvKind`] value, `size` the
// I-Maze side length (9 or 15) and `objects` the Meta-Fetch object count;
// the field not used by `kind` is ignored.
//
// # Safety
// `out` must be valid for one pointer write.
enum AldStatus ald_env_new(uint32_t kind,
                           uint32_t size,
                           uint32_t objects,
                           uint64_t seed,
                           struct AldEnv **out);

// # Safety
// `env` must be null or a handle from [`ald_env_new`] not yet freed.
void ald_env_free(struct AldEnv *env);

// # Safety
// `env` must be a live handle; `obs_dim` and `num_actions` valid for writes.
enum AldStatus ald_env_dims(struct AldEnv *env, uint32_t *obs_dim, uint32_t *num_actions);

// Starts a new episode and writes the first observation.
//
// # Safety
// `env` must be a live handle and `obs` valid for `obs_len` floats.
enum AldStatus ald_env_reset(struct AldEnv *env, uint64_t seed, float *obs, size_t obs_len);

// Applies `action` and writes the next observation, reward and done flag.
// Stepping a finished episode returns `EpisodeDone`.
//
// # Safety
// `env` must be a live handle, `obs` valid for `obs_len` floats, and
// `reward` and `done` valid for writes.
enum AldStatus ald_env_step(struct AldEnv *env,
                            uint32_t action,
                            float *obs,
                            size_t obs_len,
                            double *reward,
                            bool *done);

// Loads an acting network from a checkpoint file and its `.json` spec.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for one pointer write.
enum AldStatus ald_policy_load(const char *path, struct AldPolicy **out);

// # Safety
// `policy` must be null or a handle from [`ald_policy_load`] not yet freed.
void ald_policy_free(struct AldPolicy *policy);

// # Safety
// `policy` must be a live handle; `obs_dim` and `num_actions` valid for writes.
enum AldStatus ald_policy_dims(struct AldPolicy *policy, uint32_t *obs_dim, uint32_t *num_actions);

// Clears the recurrent state; the next call to [`ald_policy_act`] starts an
// episode.
//
// # Safety
// `policy` must be a live handle.
enum AldStatus ald_policy_reset(struct AldPolicy *policy);

// One inference step. Writes the greedy action and, when `logits` is not
// null, the action logits.
//
// # Safety
// `policy` must be a live handle, `obs` valid for `obs_len` floats,
// `logits` null or valid for `logits_len` floats, `action` valid for a write.
enum AldStatus ald_policy_act(struct AldPolicy *policy,
                              const float *obs,
                              size_t obs_len,
                              float *logits,
                              size_t logits_len,
                              uint32_t *action);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALD_H */
