#ifndef ZSNPG_H
#define ZSNPG_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum ZsStatus {
  ZS_STATUS_OK = 0,
  ZS_STATUS_NULL_POINTER = 1,
  ZS_STATUS_INVALID_ARGUMENT = 2,
  ZS_STATUS_DIMENSION = 3,
  ZS_STATUS_NUMERICS = 4,
  ZS_STATUS_BUDGET = 5,
  ZS_STATUS_IO = 6,
  ZS_STATUS_PANIC = 7,
} ZsStatus;

/**
 * Opaque game handle.
 */
typedef struct ZsGame ZsGame;

/**
 * Opaque tabular policy handle.
 */
typedef struct ZsPolicy ZsPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *zs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zs_version(void);

/**
 * Builds a game from flat row-major tensors: `reward[(s*A + a)*A + b]` and
 * `transition[((s*A + a)*A + b)*S + s']`.
 *
 * # Safety
 * `reward` and `transition` must point to `reward_len` / `transition_len`
 * readable doubles; `out` must be writable.
 */
enum ZsStatus zs_game_new(size_t n_states,
                          size_t n_actions,
                          double gamma,
                          const double *reward,
                          size_t reward_len,
                          const double *transition,
                          size_t transition_len,
                          struct ZsGame **out);

/**
 * Loads a JSON game file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ZsStatus zs_game_load(const char *path, struct ZsGame **out);

/**
 * Random game with Dirichlet(1) transitions and uniform rewards.
 *
 * # Safety
 * `out` must be writable.
 */
enum ZsStatus zs_game_random(size_t n_states,
                             size_t n_actions,
                             double gamma,
                             uint64_t seed,
                             struct ZsGame **out);

/**
 * # Safety
 * `game` must come from a `zs_game_*` constructor and not be used afterwards.
 */
void zs_game_free(struct ZsGame *game);

/**
 * Writes `|S|`, `|A|` and `gamma`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum ZsStatus zs_game_shape(const struct ZsGame *game,
                            size_t *n_states,
                            size_t *n_actions,
                            double *gamma);

/**
 * Uniform policy.
 *
 * # Safety
 * `out` must be writable.
 */
enum ZsStatus zs_policy_uniform(size_t n_states, size_t n_actions, struct ZsPolicy **out);

/**
 * Policy from row-major probabilities `probs[s*A + a]`.
 *
 * # Safety
 * `probs` must point to `len` readable doubles; `out` must be writable.
 */
enum ZsStatus zs_policy_from_probs(size_t n_states,
                                   size_t n_actions,
                                   const double *probs,
                                   size_t len,
                                   struct ZsPolicy **out);

/**
 * Copies the probabilities (`|S| * |A|` doubles) into `out`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum ZsStatus zs_policy_probs(const struct ZsPolicy *policy, double *out, size_t len);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void zs_policy_free(struct ZsPolicy *policy);

/**
 * `V^{pi1,pi2}` into `out` (`|S|` doubles).
 *
 * # Safety
 * Handles must be valid; `out` must point to `len` writable doubles.
 */
enum ZsStatus zs_evaluate(const struct ZsGame *game,
                          const struct ZsPolicy *pi1,
                          const struct ZsPolicy *pi2,
                          double *out,
                          size_t len);

/**
 * Shapley value iteration: `V*` into `v_out`, optional equilibrium policies.
 *
 * # Safety
 * `v_out` must point to `len` writable doubles; `pi1_out` / `pi2_out` may be
 * null, otherwise writable.
 */
enum ZsStatus zs_solve_nash(const struct ZsGame *game,
                            double tol,
                            double *v_out,
                            size_t len,
                            struct ZsPolicy **pi1_out,
                            struct ZsPolicy **pi2_out);

/**
 * Min player's best response to `pi1`: values into `v_out`, policy into `pi2_out` (nullable).
 *
 * # Safety
 * As for [`zs_solve_nash`].
 */
enum ZsStatus zs_best_response(const struct ZsGame *game,
                               const struct ZsPolicy *pi1,
                               double *v_out,
                               size_t len,
                               struct ZsPolicy **pi2_out);

/**
 * `V*(rho) - inf_{pi2} V^{pi1,pi2}(rho)`.
 *
 * # Safety
 * `rho` must point to `rho_len` doubles; `out` must be writable.
 */
enum ZsStatus zs_exploitability(const struct ZsGame *game,
                                const struct ZsPolicy *pi1,
                                const double *rho,
                                size_t rho_len,
                                double *out);

/**
 * Population NPG with uniform `sigma` and `rho`. Pass NaN as `eta` for the
 * default step. Writes `pi1^K` and its exploitability.
 *
 * # Safety
 * `pi1_out` and `exploitability_out` must be writable.
 */
enum ZsStatus zs_run_population(const struct ZsGame *game,
                                size_t k,
                                size_t t,
                                size_t t_prime,
                                double eta,
                                double tau,
                                struct ZsPolicy **pi1_out,
                                double *exploitability_out);

/**
 * Online NPG with tabular features, uniform `sigma`/`rho` and default radius
 * and steps. Writes the induced `pi1^K`, its exploitability and the number
 * of oracle calls.
 *
 * # Safety
 * Output pointers must be writable.
 */
enum ZsStatus zs_run_online(const struct ZsGame *game,
                            size_t k,
                            size_t t,
                            size_t t_prime,
                            size_t n,
                            size_t n_prime,
                            uint64_t seed,
                            struct ZsPolicy **pi1_out,
                            double *exploitability_out,
                            uint64_t *samples_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZSNPG_H */
