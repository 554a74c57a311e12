/* steerkit - controllability toolkit for conservative systems.
 *
 * C interface to the steerkit core: model loading and assumption checks,
 * the auxiliary tempered SDE and its integrator, invariant-measure tests,
 * and open-loop control synthesis by noise harvesting.
 *
 * Conventions:
 *   - every function that can fail returns sk_status; on failure
 *     sk_last_error() carries a message (thread-local, valid until the next
 *     failing call on the same thread);
 *   - objects are opaque handles freed with the matching *_free;
 *   - reports are JSON strings (schema "steerkit-report/1") allocated by the
 *     library and released with sk_string_free;
 *   - all randomness derives from the caller's seed; identical inputs give
 *     bit-identical outputs on the same platform.
 */
#ifndef STEERKIT_H
#define STEERKIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SK_API __declspec(dllexport)
#else
#define SK_API __attribute__((visibility("default")))
#endif

typedef enum {
  SK_OK = 0,
  SK_ERROR = 1,
  SK_PARSE_ERROR = 2,
  SK_DOMAIN_ERROR = 3,
  SK_INVALID_ARGUMENT = 4,
  SK_NUMERIC_ERROR = 5,
  SK_IO_ERROR = 6
} sk_status;

typedef struct sk_model sk_model;
typedef struct sk_sde sk_sde;
typedef struct sk_trajectory sk_trajectory;
typedef struct sk_control sk_control;

SK_API const char* sk_version(void);
SK_API const char* sk_last_error(void);
SK_API void sk_string_free(char* s);

/* ---- models ----------------------------------------------------------------
 * Builtins: "harmonic-pair", "trap", "slow", "euler" (options {"nstar":1,
 * "control_reps":[0]}), "chain" (options: {"oscillators":1,"hs":"...",
 * "couplings":["q1","q1"],"gamma":[..],"lambda":[..],"temperature":[..]}).
 * options_json may be NULL for defaults.
 */
SK_API sk_status sk_model_builtin(const char* name, const char* options_json,
                                  sk_model** out);
SK_API sk_status sk_model_load(const char* path, sk_model** out);
SK_API sk_status sk_model_parse(const char* text, sk_model** out);
SK_API sk_status sk_model_save(const sk_model* m, const char* path);
SK_API sk_status sk_model_text(const sk_model* m, char** out_text);
SK_API int sk_model_dim(const sk_model* m);
SK_API int sk_model_control_dim(const sk_model* m);
SK_API void sk_model_free(sk_model* m);

/* Assumption checks (divergence-free, conserved quantity, bracket rank at
 * sampled points, level-set growth heuristic). options_json keys: "seed",
 * "points", "depth", "tol", "rank_tol", "samples". all_pass reflects the
 * non-heuristic checks only. */
SK_API sk_status sk_model_check(const sk_model* m, const char* options_json,
                                char** report_json, int* all_pass);

/* Grid scan of the model's declared barrier bands (sign-definite field
 * components). Fails with SK_INVALID_ARGUMENT when none are declared. */
SK_API sk_status sk_model_barriers(const sk_model* m, char** report_json,
                                   int* all_hold);

/* ---- auxiliary SDE -----------------------------------------------------------
 * g_json: {"family":"linear"|"log"|"custom"|"none"|"auto", "alpha":1.0,
 * "expr":"..."} or NULL for "auto" (linear alpha=1 when the model has a
 * conserved quantity, untempered otherwise).
 */
SK_API sk_status sk_sde_build(const sk_model* m, const char* g_json, sk_sde** out);
SK_API sk_status sk_sde_info(const sk_sde* s, char** info_json);
SK_API sk_status sk_sde_integrate(const sk_sde* s, const double* z0, int dim,
                                  double dt, int64_t steps, uint64_t seed,
                                  sk_trajectory** out);
SK_API sk_status sk_sde_energy_bound(const sk_sde* s, const double* z0, int dim,
                                     double t_end, int paths, double dt,
                                     uint64_t seed, char** report_json, int* pass);
SK_API sk_status sk_sde_adjoint_residual(const sk_sde* s, double tol,
                                         char** report_json, int* pass);
/* refs_or_null: explicit reference per test function, or NULL to use
 * quadrature references (dimension <= 3). burn < 0 means 10% of the run. */
SK_API sk_status sk_sde_stationarity(const sk_sde* s, const char* const* fns,
                                     const double* refs_or_null, int nfns,
                                     const double* z0, int dim, int64_t steps,
                                     int64_t burn, double dt, uint64_t seed,
                                     char** report_json, int* pass);
SK_API sk_status sk_sde_kernel_overlap(const sk_sde* s, const double* z,
                                       const double* zp, int dim, double t,
                                       int paths, double dt, uint64_t seed,
                                       char** report_json);
SK_API void sk_sde_free(sk_sde* s);

/* ---- trajectories ------------------------------------------------------------ */
SK_API int64_t sk_trajectory_steps(const sk_trajectory* t);
SK_API int sk_trajectory_dim(const sk_trajectory* t);
SK_API sk_status sk_trajectory_state(const sk_trajectory* t, int64_t k, double* out,
                                     int dim);
SK_API double sk_trajectory_time(const sk_trajectory* t, int64_t k);
SK_API sk_status sk_trajectory_save_csv(const sk_trajectory* t, const char* path);
SK_API sk_status sk_trajectory_save_noise(const sk_trajectory* t, const char* path);
SK_API sk_status sk_trajectory_load_csv(const char* path, sk_trajectory** out);
SK_API void sk_trajectory_free(sk_trajectory* t);

/* ---- control synthesis --------------------------------------------------------- */
SK_API sk_status sk_extract_control(const sk_model* m, const sk_trajectory* t,
                                    sk_control** out);
SK_API sk_status sk_verify_control(const sk_model* m, const double* z0, int dim,
                                   const sk_control* u, const double* center,
                                   double eps, double ode_dt, char** report_json,
                                   int* hit);
/* options_json keys: "dt0", "max_steps", "max_attempts", "ode_refine",
 * "hit_shrink", "rank_gate". control_out receives the verified control on
 * success (NULL otherwise); may itself be NULL if only the report is wanted. */
SK_API sk_status sk_steer(const sk_model* m, const char* g_json, const double* z0,
                          const double* z1, int dim, double eps, int budget,
                          uint64_t seed, const char* options_json,
                          sk_control** control_out, char** report_json,
                          int* success);
SK_API int64_t sk_control_steps(const sk_control* u);
SK_API double sk_control_duration(const sk_control* u);
SK_API sk_status sk_control_save_csv(const sk_control* u, const char* path);
SK_API void sk_control_free(sk_control* u);

#ifdef __cplusplus
}
#endif

#endif /* STEERKIT_H */
