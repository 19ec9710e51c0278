#ifndef DESOM_H
#define DESOM_H

/* Generated by cbindgen from the desom-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
#define DESOM_OK 0

#define DESOM_ERR_NULL_POINTER 1

#define DESOM_ERR_INVALID_UTF8 2

#define DESOM_ERR_CONFIG 3

#define DESOM_ERR_RUN 4

#define DESOM_ERR_NOT_RUN 5

#define DESOM_ERR_OUT_OF_RANGE 6

#define DESOM_ERR_PANIC 7

/**
 * Metric selectors for [`desom_experiment_copy_series`].
 */
#define DESOM_METRIC_TRACKING_ERROR 0

#define DESOM_METRIC_LYAPUNOV 1

#define DESOM_METRIC_PRIMAL_ERROR 2

#define DESOM_METRIC_DRIFT 3

/**
 * An experiment handle: a parsed configuration, the generated problem
 * instance, and (after a successful run) the recorded trajectories.
 */
typedef struct DesomExperiment DesomExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an experiment from a TOML configuration string. Returns NULL on
 * error; see [`desom_last_error_message`].
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string or NULL (NULL selects
 * the default configuration).
 */
struct DesomExperiment *desom_experiment_new(const char *config_toml);

/**
 * Releases an experiment handle. NULL is ignored.
 *
 * # Safety
 * `handle` must be a pointer returned by [`desom_experiment_new`] that has
 * not been freed already.
 */
void desom_experiment_free(struct DesomExperiment *handle);

/**
 * Runs all configured solvers over the horizon. Idempotent: a second call
 * re-runs and replaces the stored result.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
int desom_experiment_run(struct DesomExperiment *handle);

/**
 * Number of solver trajectories, or a negative status code.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
int desom_experiment_solver_count(const struct DesomExperiment *handle);

/**
 * Label of solver `idx`, as a heap string, or NULL on error.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
char *desom_experiment_solver_label(const struct DesomExperiment *handle, int idx);

/**
 * Number of recorded steps for solver `idx`, or a negative status code.
 * A diverged solver has fewer recorded steps than the horizon.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
int desom_experiment_row_count(const struct DesomExperiment *handle, int idx);

/**
 * Copies one metric series of solver `idx` into `buf` (capacity `len`
 * doubles). Returns the number of values written, or a negative status
 * code. `metric` is one of the `DESOM_METRIC_*` selectors.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`] and `buf`
 * must point to at least `len` writable doubles.
 */
int desom_experiment_copy_series(const struct DesomExperiment *handle,
                                 int idx,
                                 int metric,
                                 double *buf,
                                 size_t len);

/**
 * Full metrics table as a CSV heap string, or NULL on error.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
char *desom_experiment_metrics_csv(const struct DesomExperiment *handle);

/**
 * Run metadata (resolved config, tuned hyperparameters, network constants)
 * as a JSON heap string, or NULL on error.
 *
 * # Safety
 * `handle` must be a live pointer from [`desom_experiment_new`].
 */
char *desom_experiment_metadata_json(const struct DesomExperiment *handle);

/**
 * The message of the last error on this thread, as a heap string, or NULL
 * if no error has occurred.
 */
char *desom_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must be a pointer returned by this library that has not been freed.
 */
void desom_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DESOM_H */
