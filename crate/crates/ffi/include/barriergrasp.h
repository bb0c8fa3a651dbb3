#ifndef BARRIERGRASP_H
#define BARRIERGRASP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum BgStatus {
  BG_STATUS_OK = 0,
  BG_STATUS_NULL_POINTER = 1,
  BG_STATUS_INVALID_UTF8 = 2,
  BG_STATUS_INVALID_ARGUMENT = 3,
  BG_STATUS_INVALID_SCENARIO = 4,
  BG_STATUS_IO = 5,
  BG_STATUS_PARSE = 6,
  BG_STATUS_NUMERICAL = 7,
  BG_STATUS_PANIC = 8,
} BgStatus;

/**
 * Class-K shapes available to [`bg_velocity_envelope`].
 */
typedef enum BgEnvelopeKind {
  /**
   * `h`
   */
  BG_ENVELOPE_KIND_LINEAR = 0,
  /**
   * `0.15 h^3`
   */
  BG_ENVELOPE_KIND_CUBIC = 1,
  /**
   * `2 atan(h)`
   */
  BG_ENVELOPE_KIND_ARCTAN = 2,
} BgEnvelopeKind;

/**
 * Opaque handle to a finished run: trace plus summary.
 */
typedef struct BgRun BgRun;

/**
 * Opaque scenario handle.
 */
typedef struct BgScenario BgScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *bg_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *bg_version(void);

/**
 * Loads a scenario from a JSON file path or a built-in name.
 *
 * # Safety
 * `source` must be a nul-terminated string; `out` must be writable.
 */
enum BgStatus bg_scenario_load(const char *source, struct BgScenario **out);

/**
 * Parses a scenario from JSON text. Relative model paths resolve against
 * the working directory.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum BgStatus bg_scenario_from_json(const char *json, struct BgScenario **out);

/**
 * Applies one `key=value` override in place. On failure the scenario is
 * left unchanged.
 *
 * # Safety
 * `scenario` must come from this library; `assignment` must be a
 * nul-terminated string.
 */
enum BgStatus bg_scenario_override(struct BgScenario *scenario, const char *assignment);

/**
 * Serializes the scenario back to JSON. Free the result with
 * [`bg_string_free`].
 *
 * # Safety
 * `scenario` must come from this library; `out` must be writable.
 */
enum BgStatus bg_scenario_to_json(const struct BgScenario *scenario, char **out);

/**
 * # Safety
 * `scenario` must come from this library or be null, and not be used
 * afterwards.
 */
void bg_scenario_free(struct BgScenario *scenario);

/**
 * Simulates the scenario. A lost grasp is a normal outcome reported in the
 * summary, not an error.
 *
 * # Safety
 * `scenario` must come from this library; `out` must be writable.
 */
enum BgStatus bg_run(const struct BgScenario *scenario, struct BgRun **out);

/**
 * Number of recorded samples.
 *
 * # Safety
 * `run` must come from this library or be null (yields 0).
 */
size_t bg_run_sample_count(const struct BgRun *run);

/**
 * Whether any monitored barrier went negative.
 *
 * # Safety
 * `run` must come from this library or be null (yields false).
 */
bool bg_run_any_violation(const struct BgRun *run);

/**
 * Minimum margin-shifted barrier over the run, NaN if nothing was
 * recorded.
 *
 * # Safety
 * `run` must come from this library or be null (yields NaN).
 */
double bg_run_min_h_robust(const struct BgRun *run);

/**
 * Run summary as JSON. Free the result with [`bg_string_free`].
 *
 * # Safety
 * `run` must come from this library; `out` must be writable.
 */
enum BgStatus bg_run_summary_json(const struct BgRun *run, char **out);

/**
 * Writes the trace as CSV to `path`.
 *
 * # Safety
 * `run` must come from this library; `path` must be a nul-terminated
 * string.
 */
enum BgStatus bg_run_write_csv(const struct BgRun *run, const char *path);

/**
 * # Safety
 * `run` must come from this library or be null, and not be used
 * afterwards.
 */
void bg_run_free(struct BgRun *run);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library or be null.
 */
void bg_string_free(char *s);

/**
 * Velocity interval at position `q` keeping both barriers of
 * `lower <= q <= upper` nonnegative.
 *
 * # Safety
 * `v_lo` and `v_hi` must be writable.
 */
enum BgStatus bg_velocity_envelope(enum BgEnvelopeKind kind,
                                   double lower,
                                   double upper,
                                   double q,
                                   double *v_lo,
                                   double *v_hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BARRIERGRASP_H */
