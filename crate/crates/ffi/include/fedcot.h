#ifndef FEDCOT_H
#define FEDCOT_H

/* Generated by cbindgen from the fedcot-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Per-client metric selector for `fedcot_simulation_metric`.
typedef enum FedcotMetric {
  FedcotMetric_Accuracy = 0,
  FedcotMetric_PAt1 = 1,
  FedcotMetric_PAtK = 2,
  FedcotMetric_Delta = 3,
  FedcotMetric_MajorityVoteAccuracy = 4,
  FedcotMetric_EpochLoss = 5,
} FedcotMetric;

// Status code returned by every API function.
typedef enum FedcotStatus {
  FedcotStatus_Ok = 0,
  // A required pointer argument was null.
  FedcotStatus_NullArgument = 1,
  // A string argument was not valid UTF-8.
  FedcotStatus_InvalidUtf8 = 2,
  // The configuration failed to parse or validate.
  FedcotStatus_InvalidConfig = 3,
  // The requested round, client, or state was out of range.
  FedcotStatus_OutOfRange = 4,
  // The engine reported an error; see `fedcot_last_error_message`.
  FedcotStatus_RuntimeError = 5,
  // A panic was caught at the boundary.
  FedcotStatus_InternalPanic = 6,
} FedcotStatus;

// Opaque simulation handle.
typedef struct FedcotSimulation FedcotSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *fedcot_version(void);

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread; do not free.
const char *fedcot_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be a pointer previously returned by a `fedcot_*` function that
// documents `fedcot_string_free` as its deallocator, or null.
void fedcot_string_free(char *s);

// Builds a simulation handle from a TOML configuration string. An empty
// string selects the documented defaults.
//
// # Safety
// `config_toml` must be null or a valid null-terminated string; `out` must
// point to writable pointer storage.
enum FedcotStatus fedcot_simulation_new(const char *config_toml, struct FedcotSimulation **out);

// Releases a simulation handle.
//
// # Safety
// `sim` must be null or a handle from `fedcot_simulation_new` that has not
// been freed already.
void fedcot_simulation_free(struct FedcotSimulation *sim);

// Runs the configured federation. Idempotent: a second call re-runs from
// scratch with identical results.
//
// # Safety
// `sim` must be a live handle from `fedcot_simulation_new`.
enum FedcotStatus fedcot_simulation_run(struct FedcotSimulation *sim);

// Number of completed rounds; zero before `fedcot_simulation_run`.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable storage.
enum FedcotStatus fedcot_simulation_rounds(const struct FedcotSimulation *sim, uint32_t *out);

// Number of clients in the configured federation.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable storage.
enum FedcotStatus fedcot_simulation_clients(const struct FedcotSimulation *sim, uint32_t *out);

// Reads one per-client metric from a completed round (rounds are 1-based).
//
// # Safety
// `sim` must be a live handle; `out` must point to writable storage.
enum FedcotStatus fedcot_simulation_metric(const struct FedcotSimulation *sim,
                                           uint32_t round,
                                           uint32_t client,
                                           enum FedcotMetric metric,
                                           double *out);

// Full run report as a JSON document. Free with `fedcot_string_free`.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable pointer storage.
enum FedcotStatus fedcot_simulation_report_json(const struct FedcotSimulation *sim, char **out);

// Extracts the final answer from a generation text given the option set.
// Writes the matched option (free with `fedcot_string_free`) or null when
// the candidate abstains.
//
// # Safety
// `text` must be a valid null-terminated string; `options` must point to
// `n_options` valid null-terminated strings; `out` must point to writable
// pointer storage.
enum FedcotStatus fedcot_extract_answer(const char *text,
                                        const char *const *options,
                                        uintptr_t n_options,
                                        char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCOT_H */
