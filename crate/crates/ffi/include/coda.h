#ifndef CODA_H
#define CODA_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CodaStatus {
  CODA_STATUS_OK = 0,
  CODA_STATUS_NULL_ARGUMENT = 1,
  CODA_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad config, parameter or problem name.
   */
  CODA_STATUS_VALIDATION = 3,
  /**
   * Capability, numeric or other runtime failure.
   */
  CODA_STATUS_RUNTIME = 4,
  CODA_STATUS_IO = 5,
  CODA_STATUS_SHAPE = 6,
  CODA_STATUS_PANIC = 7,
} CodaStatus;

/**
 * Results of a multi-seed experiment.
 */
typedef struct CodaExperiment CodaExperiment;

/**
 * Suite problem handle.
 */
typedef struct CodaProblem CodaProblem;

typedef struct CodaDims {
  size_t d_x;
  size_t d_y;
  size_t d_z;
} CodaDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on this thread.
 */
const char *coda_last_error(void);

/**
 * Library version as a static string.
 */
const char *coda_version(void);

/**
 * Builds a suite problem. `params` is null or `key=value` pairs separated
 * by `;` or newlines.
 *
 * # Safety
 * `name` and `params` must be null or NUL-terminated; `out` must be writable.
 */
enum CodaStatus coda_problem_new(const char *name, const char *params, struct CodaProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from [`coda_problem_new`] not yet freed.
 */
void coda_problem_free(struct CodaProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle and `out` writable.
 */
enum CodaStatus coda_problem_dims(const struct CodaProblem *problem, struct CodaDims *out);

/**
 * Full-expectation objective `F(x, y)`.
 *
 * # Safety
 * `x` and `y` must point to `nx` and `ny` doubles, `out` must be writable.
 */
enum CodaStatus coda_problem_objective(const struct CodaProblem *problem,
                                       const double *x,
                                       size_t nx,
                                       const double *y,
                                       size_t ny,
                                       double *out);

/**
 * Full-expectation gradient, written to `gx` (length `nx`) and `gy` (length `ny`).
 *
 * # Safety
 * `x`, `gx` must hold `nx` doubles and `y`, `gy` must hold `ny` doubles.
 */
enum CodaStatus coda_problem_gradient(const struct CodaProblem *problem,
                                      const double *x,
                                      size_t nx,
                                      const double *y,
                                      size_t ny,
                                      double *gx,
                                      double *gy);

/**
 * Parses an experiment config (the CLI format) and runs every seed.
 * `threads == 0` uses all cores. Seeds that fail are counted by
 * [`coda_experiment_failed`] and left out of the CSV.
 *
 * # Safety
 * `config` must be NUL-terminated and `out` writable.
 */
enum CodaStatus coda_experiment_run(const char *config,
                                    size_t threads,
                                    struct CodaExperiment **out);

/**
 * Number of seeds in the experiment.
 *
 * # Safety
 * `exp` must be null or a live handle.
 */
size_t coda_experiment_seeds(const struct CodaExperiment *exp);

/**
 * Number of seeds whose run failed.
 *
 * # Safety
 * `exp` must be null or a live handle.
 */
size_t coda_experiment_failed(const struct CodaExperiment *exp);

/**
 * Trajectories as CSV text; release with [`coda_string_free`].
 *
 * # Safety
 * `exp` must be a live handle and `out` writable.
 */
enum CodaStatus coda_experiment_csv(const struct CodaExperiment *exp, char **out);

/**
 * # Safety
 * `exp` must be null or a handle from [`coda_experiment_run`] not yet freed.
 */
void coda_experiment_free(struct CodaExperiment *exp);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void coda_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CODA_H */
