#ifndef WELLA_H
#define WELLA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WellaStatus {
  WELLA_STATUS_OK = 0,
  WELLA_STATUS_NULL_ARGUMENT = 1,
  WELLA_STATUS_INVALID_UTF8 = 2,
  WELLA_STATUS_INVALID_INPUT = 3,
  WELLA_STATUS_PARSE_ERROR = 4,
  WELLA_STATUS_METRIC_UNDEFINED = 5,
  WELLA_STATUS_PANIC = 6,
} WellaStatus;

typedef enum WellaRole {
  WELLA_ROLE_RO1 = 0,
  WELLA_ROLE_RO2 = 1,
  WELLA_ROLE_RO3 = 2,
  WELLA_ROLE_CO = 3,
  WELLA_ROLE_SO = 4,
} WellaRole;

typedef enum WellaInstrument {
  WELLA_INSTRUMENT_BOTH = 0,
  WELLA_INSTRUMENT_TLX = 1,
  WELLA_INSTRUMENT_SART = 2,
} WellaInstrument;

// Opaque parsed scenario.
typedef struct WellaScenario WellaScenario;

// r2 and ev are NaN when the truth series has zero variance.
typedef struct WellaMetrics {
  double r2;
  double rmse;
  double mae;
  double ev;
} WellaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or an empty string.
// The pointer stays valid until the next library call on this thread.
const char *wella_last_error(void);

const char *wella_version(void);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void wella_string_free(char *s);

// Unweighted NASA-TLX workload from MD, PD, TD, effort, performance,
// frustration.
//
// # Safety
// `subscales` must point to 6 doubles; `out` must be writable.
enum WellaStatus wella_tlx_workload(const double *subscales, double *out);

// SART dimensions and SA from 10 item ratings in 1..=7. Any of the output
// pointers may be null.
//
// # Safety
// `items` must point to 10 bytes; non-null outputs must be writable.
enum WellaStatus wella_sart_score(const uint8_t *items,
                                  uint32_t *demand,
                                  uint32_t *supply,
                                  uint32_t *understand,
                                  double *sa);

// Regression metrics over `n` paired values. Returns
// `MetricUndefined` (with r2 and ev set to NaN) when truth is constant.
//
// # Safety
// `truth` and `pred` must point to `n` doubles; `out` must be writable.
enum WellaStatus wella_metrics(const double *truth,
                               const double *pred,
                               size_t n,
                               struct WellaMetrics *out);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum WellaStatus wella_scenario_parse(const char *json, struct WellaScenario **out);

// # Safety
// `scenario` must be null or a handle from `wella_scenario_parse` not yet
// freed.
void wella_scenario_free(struct WellaScenario *scenario);

// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum WellaStatus wella_scenario_id(const struct WellaScenario *scenario, char **out);

// Canonical JSON form of the scenario.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum WellaStatus wella_scenario_to_json(const struct WellaScenario *scenario, char **out);

// The scenario as one role sees it, rendered as prompt text. `role_id` is
// a `WellaRole` value.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum WellaStatus wella_scenario_role_view(const struct WellaScenario *scenario,
                                          uint32_t role_id,
                                          char **out);

// Runs all five roles against the deterministic mock backend and returns
// the session as JSONL. `which` is a `WellaInstrument` value.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum WellaStatus wella_crew_mock(const struct WellaScenario *scenario,
                                 uint64_t session_seed,
                                 uint32_t which,
                                 char **out);

// Parses a model response under the response grammar and returns
// `{"trajectory": [...], "tlx": {...} | null, "sart": [...] | null}`.
// On `ParseError` the last error holds the structured error as JSON.
//
// # Safety
// `raw` must be a NUL-terminated string; `out` must be writable.
enum WellaStatus wella_parse_response(const char *raw, uint32_t which, char **out);

// Monte Carlo baseline. `params_json` is a JSON object of plant
// parameters and may be null. Returns the result as JSON.
//
// # Safety
// String arguments must be NUL-terminated (or null where allowed); `out`
// must be writable.
enum WellaStatus wella_goms_run(const char *procedure_json,
                                const char *params_json,
                                uint64_t n_runs,
                                uint64_t seed,
                                uint32_t shards,
                                char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WELLA_H */
