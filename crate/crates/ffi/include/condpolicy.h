#ifndef CONDPOLICY_H
#define CONDPOLICY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_NULL_POINTER = 1,
  CP_STATUS_INVALID_ARGUMENT = 2,
  CP_STATUS_IO = 3,
  CP_STATUS_CHECKPOINT = 4,
  CP_STATUS_NUMERIC = 5,
  CP_STATUS_BUFFER_TOO_SMALL = 6,
  CP_STATUS_PANIC = 7,
} CpStatus;

/**
 * Opaque policy network.
 */
typedef struct CpPolicy CpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cp_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length without the NUL.
 * The message is empty after a successful call.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cp_last_error(char *buf, size_t len);

/**
 * Builds a freshly initialized policy. `hidden` lists `n_hidden` layer widths.
 *
 * # Safety
 * `hidden` must point to `n_hidden` values (or be null when zero); `out` must be writable.
 */
enum CpStatus cp_policy_new(size_t obs_dim,
                            size_t act_dim,
                            const size_t *hidden,
                            size_t n_hidden,
                            bool discrete,
                            uint64_t seed,
                            struct CpPolicy **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CpStatus cp_policy_load(const char *path, struct CpPolicy **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `policy` must come from this library; `path` must be a NUL-terminated string.
 */
enum CpStatus cp_policy_save(const struct CpPolicy *policy, const char *path);

/**
 * Releases a policy. Null is ignored.
 *
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void cp_policy_free(struct CpPolicy *policy);

/**
 * Observation width, action width (or count) and whether actions are discrete.
 *
 * # Safety
 * `policy` must come from this library; the out pointers must be writable.
 */
enum CpStatus cp_policy_dims(const struct CpPolicy *policy,
                             size_t *obs_dim,
                             size_t *act_dim,
                             bool *discrete);

/**
 * Actor outputs (gaussian means or categorical logits), row-major
 * `n_states × act_dim`.
 *
 * # Safety
 * `states` holds `n_states × obs_dim` values; `out` has room for `out_len`.
 */
enum CpStatus cp_policy_actor_out(const struct CpPolicy *policy,
                                  const double *states,
                                  size_t n_states,
                                  double *out,
                                  size_t out_len);

/**
 * Deterministic actions. Gaussian heads write `act_dim` means per state;
 * categorical heads write one argmax index (as a double) per state.
 *
 * # Safety
 * `states` holds `n_states × obs_dim` values; `out` has room for `out_len`.
 */
enum CpStatus cp_policy_act_mode(const struct CpPolicy *policy,
                                 const double *states,
                                 size_t n_states,
                                 double *out,
                                 size_t out_len);

/**
 * State values, one per state.
 *
 * # Safety
 * `states` holds `n_states × obs_dim` values; `out` holds `n_states`.
 */
enum CpStatus cp_policy_values(const struct CpPolicy *policy,
                               const double *states,
                               size_t n_states,
                               double *out);

/**
 * Per-state sampled sensitivity `‖f(s + δ) − f(s)‖ / ε` with `‖δ‖ = ε`.
 * The same `seed` draws the same perturbations.
 *
 * # Safety
 * `states` holds `n_states × obs_dim` values; `out_j` holds `n_states`.
 */
enum CpStatus cp_conditioning_estimate(const struct CpPolicy *policy,
                                       const double *states,
                                       size_t n_states,
                                       double delta_scale,
                                       uint64_t seed,
                                       double *out_j);

/**
 * Exact spectrum of the actor Jacobian at one state, using central
 * differences of step `h`. Fails with [`CpStatus::Numeric`] when every
 * singular value is numerically zero.
 *
 * # Safety
 * `state` holds `obs_dim` values; the out pointers must be writable.
 */
enum CpStatus cp_conditioning_exact(const struct CpPolicy *policy,
                                    const double *state,
                                    double h,
                                    double *sigma_max,
                                    double *sigma_min_positive,
                                    double *condition_number);

/**
 * Clamp penalty of sensitivities `j`, mean-reduced over `n` entries.
 * Any out pointer may be null.
 *
 * # Safety
 * `j` holds `n` values.
 */
enum CpStatus cp_psi(const double *j,
                     size_t n,
                     double lambda_min,
                     double lambda_max,
                     double *out_psi,
                     double *out_psi_min,
                     double *out_psi_max);

/**
 * Per-state clamp terms for one sensitivity value.
 *
 * # Safety
 * Both out pointers must be writable.
 */
enum CpStatus cp_psi_terms(double j,
                           double lambda_min,
                           double lambda_max,
                           double *out_psi_min,
                           double *out_psi_max);

/**
 * Generalized advantages for one environment's trajectory of length `n`.
 * `bootstrap_values[t]` is read only at truncations and at the last step.
 *
 * # Safety
 * Every input holds `n` entries; both outputs have room for `n`.
 */
enum CpStatus cp_gae(const double *rewards,
                     const double *values,
                     const bool *dones,
                     const bool *truncations,
                     const double *bootstrap_values,
                     size_t n,
                     double gamma,
                     double lambda,
                     double *out_advantages,
                     double *out_returns);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONDPOLICY_H */
