#ifndef RECAUDIT_H
#define RECAUDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RaStatus {
  RA_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RA_ERR_NULL = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RA_ERR_UTF8 = 2,
  /**
   * The input was rejected: malformed, out of range or unknown reference.
   */
  RA_ERR_INVALID = 3,
  RA_ERR_IO = 4,
  RA_ERR_RUNTIME = 5,
  /**
   * The library panicked. The handle arguments should not be reused.
   */
  RA_ERR_PANIC = 6,
} RaStatus;

/**
 * Result of a completed simulation run: the exposure log and its report.
 */
typedef struct RaRun RaRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if the last call
 * succeeded. Valid until the next library call on the same thread.
 */
const char *ra_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *ra_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void ra_string_free(char *s);

/**
 * Parses a run configuration (json text; relative paths resolve against
 * `base_dir`), runs the simulation and evaluates it. On success `*out` owns
 * the new run handle.
 *
 * # Safety
 * `config_json` and `base_dir` must be nul-terminated strings; `out` must be
 * writable.
 */
enum RaStatus ra_run_execute(const char *config_json, const char *base_dir, struct RaRun **out);

/**
 * Copies the run's exposure log (json lines) into a new string.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_run_log(const struct RaRun *run, char **out);

/**
 * Copies the run's risk report (json) into a new string.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_run_report(const struct RaRun *run, char **out);

/**
 * Releases a run handle. Null is ignored.
 *
 * # Safety
 * `run` must come from [`ra_run_execute`] and not have been freed already.
 */
void ra_run_free(struct RaRun *run);

/**
 * Evaluates an exposure log (json lines) into a risk report. `options_json`
 * may be null for defaults.
 *
 * # Safety
 * String arguments must be nul-terminated; `out` must be writable.
 */
enum RaStatus ra_evaluate_log(const char *log_jsonl, const char *options_json, char **out);

/**
 * Gini coefficient of `len` non-negative values.
 *
 * # Safety
 * `values` must point to `len` doubles; `out` must be writable.
 */
enum RaStatus ra_gini(const double *values, size_t len, double *out);

/**
 * Jensen-Shannon divergence (base 2) of two distributions of length `len`.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles; `out` must be writable.
 */
enum RaStatus ra_js_divergence(const double *p, const double *q, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECAUDIT_H */
