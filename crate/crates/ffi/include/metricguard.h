#ifndef METRICGUARD_H
#define METRICGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MgStatus {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_ARGUMENT = 2,
  MG_STATUS_UNKNOWN_SCENARIO = 3,
  MG_STATUS_UNKNOWN_PARAMETER = 4,
  MG_STATUS_PARAMETER_OUT_OF_RANGE = 5,
  MG_STATUS_INFEASIBLE_STATE = 6,
  MG_STATUS_INTEGRATION_FAILED = 7,
  MG_STATUS_NO_CONVERGENCE = 8,
  MG_STATUS_NUMERICAL_ERROR = 9,
  MG_STATUS_BUFFER_TOO_SMALL = 10,
  MG_STATUS_PANIC = 11,
} MgStatus;

typedef enum MgRunStatus {
  MG_RUN_STATUS_HORIZON_REACHED = 0,
  MG_RUN_STATUS_POSITION_GUARD = 1,
  MG_RUN_STATUS_SPEED_GUARD = 2,
  MG_RUN_STATUS_BOUNDARY_GUARD = 3,
} MgRunStatus;

typedef enum MgClassification {
  MG_CLASSIFICATION_ASYMPTOTICALLY_STABLE = 0,
  MG_CLASSIFICATION_CENTER_CANDIDATE = 1,
  MG_CLASSIFICATION_UNSTABLE = 2,
  MG_CLASSIFICATION_DEGENERATE = 3,
} MgClassification;

/*
 A configured scenario together with its synthesized feedback.
 */
typedef struct MgScenario MgScenario;

/*
 A sampled trajectory; rows follow the CSV layout
 `t, q1..qn, qd1..qdn, u1..um, E, E_Lf, phi`.
 */
typedef struct MgTrajectory MgTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`) and returns the full message length in bytes.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t mg_last_error(char *buf, size_t len);

/*
 Builds the named scenario with `count` parameter overrides.

 # Safety
 `name` must be a NUL-terminated string; `keys` and `values` must each point
 to `count` elements (or be null when `count` is 0); `out` must be writable.
 */
enum MgStatus mg_scenario_new(const char *name,
                              const char *const *keys,
                              const double *values,
                              size_t count,
                              struct MgScenario **out);

/*
 # Safety
 `handle` must be null or come from [`mg_scenario_new`] and not be freed yet.
 */
void mg_scenario_free(struct MgScenario *handle);

/*
 Configuration dimension `n`, or 0 for a null handle.

 # Safety
 `handle` must be null or a live scenario handle.
 */
size_t mg_scenario_dim(const struct MgScenario *handle);

/*
 Number of controls `m`, or 0 for a null handle.

 # Safety
 `handle` must be null or a live scenario handle.
 */
size_t mg_scenario_control_count(const struct MgScenario *handle);

/*
 Replaces the initial state; `q` and `qd` hold `n` values each.

 # Safety
 `handle` must be a live scenario handle; `q` and `qd` must point to `n` values.
 */
enum MgStatus mg_scenario_set_initial(struct MgScenario *handle,
                                      const double *q,
                                      const double *qd,
                                      size_t n);

/*
 Evaluates the scenario's feedback at `(q, qd)` into `u` (`m` values).

 # Safety
 `handle` must be a live scenario handle; `q`, `qd` must point to `n` values
 and `u` to `m` writable values.
 */
enum MgStatus mg_scenario_control(const struct MgScenario *handle,
                                  const double *q,
                                  const double *qd,
                                  size_t n,
                                  double *u,
                                  size_t m);

/*
 Integrates the closed loop over `horizon` (the scenario default when not
 positive). Guard events are successful runs; see [`mg_trajectory_status`].

 # Safety
 `handle` must be a live scenario handle and `out` writable.
 */
enum MgStatus mg_scenario_simulate(const struct MgScenario *handle,
                                   double horizon,
                                   struct MgTrajectory **out);

/*
 # Safety
 `handle` must be null or come from [`mg_scenario_simulate`] and not be freed yet.
 */
void mg_trajectory_free(struct MgTrajectory *handle);

/*
 Number of samples, or 0 for a null handle.

 # Safety
 `handle` must be null or a live trajectory handle.
 */
size_t mg_trajectory_len(const struct MgTrajectory *handle);

/*
 Values per sample row, or 0 for a null handle.

 # Safety
 `handle` must be null or a live trajectory handle.
 */
size_t mg_trajectory_width(const struct MgTrajectory *handle);

/*
 Copies sample `index` into `row` (`len` must be at least the width).

 # Safety
 `handle` must be a live trajectory handle; `row` must point to `len` writable values.
 */
enum MgStatus mg_trajectory_row(const struct MgTrajectory *handle,
                                size_t index,
                                double *row,
                                size_t len);

/*
 How the run ended; `event_time` receives the guard time or the final time.

 # Safety
 `handle` must be a live trajectory handle; the outputs must be writable.
 */
enum MgStatus mg_trajectory_status(const struct MgTrajectory *handle,
                                   enum MgRunStatus *status,
                                   double *event_time);

/*
 Linearizes the closed loop at the scenario's documented equilibrium.
 Eigenvalues go to `re`/`im` (capacity `cap`, count in `count`).

 # Safety
 `handle` must be a live scenario handle; `re` and `im` must point to `cap`
 writable values; `count` and `class` must be writable.
 */
enum MgStatus mg_scenario_stability(const struct MgScenario *handle,
                                    double *re,
                                    double *im,
                                    size_t cap,
                                    size_t *count,
                                    enum MgClassification *class_);

/*
 Runs the verification battery on the named scenario with defaults.

 # Safety
 `name` must be a NUL-terminated string; `passed` and `total` must be writable.
 */
enum MgStatus mg_verify(const char *name, uint32_t *passed, uint32_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METRICGUARD_H */
