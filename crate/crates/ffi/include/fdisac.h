#ifndef FDISAC_H
#define FDISAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FdisacStatus {
  FDISAC_STATUS_OK = 0,
  FDISAC_STATUS_NULL_POINTER = 1,
  FDISAC_STATUS_INVALID_ARGUMENT = 2,
  FDISAC_STATUS_CONFIG = 3,
  FDISAC_STATUS_INFEASIBLE = 4,
  FDISAC_STATUS_IO = 5,
  FDISAC_STATUS_OUT_OF_RANGE = 6,
  FDISAC_STATUS_PANIC = 7,
} FdisacStatus;

// Outcome of one optimized and simulated realization.
typedef struct FdisacRun FdisacRun;

// Scenario description. Create with [`fdisac_scenario_default`] or
// [`fdisac_scenario_from_toml`].
typedef struct FdisacScenario FdisacScenario;

typedef struct FdisacTarget {
  double angle_deg;
  double range_m;
  double velocity_mps;
  double rcs_m2;
} FdisacTarget;

typedef struct FdisacEstimate {
  double angle_deg;
  double range_m;
  double velocity_mps;
  double peak_power_db;
} FdisacEstimate;

// Radar-equation parameters. `round_trip_shadowing` selects whether the
// shadowing loss is applied once or on both legs.
typedef struct FdisacBudget {
  double tx_power_dbm;
  double combined_gain_db;
  double sinr_target_db;
  double noise_floor_dbm;
  double nf_db;
  double rcs_m2;
  double ploss_exp;
  double shadow_db;
  double wavelength_m;
  bool round_trip_shadowing;
  double min_range_m;
  double max_range_m;
} FdisacBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next
// failing call on the same thread.
const char *fdisac_last_error(void);

// Library version as a static NUL-terminated string.
const char *fdisac_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void fdisac_string_free(char *s);

struct FdisacScenario *fdisac_scenario_default(void);

// Parses a TOML scenario; fields left out keep their defaults.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum FdisacStatus fdisac_scenario_from_toml(const char *toml, struct FdisacScenario **out);

// # Safety
// `s` must be a valid scenario handle and `out` a writable pointer.
enum FdisacStatus fdisac_scenario_to_toml(const struct FdisacScenario *s, char **out);

// # Safety
// `s` must be null or a handle from this library, not yet freed.
void fdisac_scenario_free(struct FdisacScenario *s);

// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_seed(struct FdisacScenario *s, uint64_t seed);

// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_tx_power_dbm(struct FdisacScenario *s, double dbm);

// Replaces the target list with `count` randomly drawn targets.
//
// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_n_targets(struct FdisacScenario *s, uint32_t count);

// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_lambda_s_db(struct FdisacScenario *s, double db);

// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_lambda_sic_dbm(struct FdisacScenario *s, double dbm);

// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_n_taps(struct FdisacScenario *s, uint32_t taps);

// Use the true target directions as the optimizer's priors.
//
// # Safety
// `s` must be a valid scenario handle.
enum FdisacStatus fdisac_scenario_set_genie_doa(struct FdisacScenario *s, bool genie);

// Optimizes, simulates one frame and, when `sense` is set, runs the CPI
// radar processing. Returns `Infeasible` when no operating point satisfies
// the constraints.
//
// # Safety
// `s` must be a valid scenario handle and `out` a writable pointer.
enum FdisacStatus fdisac_run(const struct FdisacScenario *s, bool sense, struct FdisacRun **out);

// # Safety
// `r` must be null or a handle from this library, not yet freed.
void fdisac_run_free(struct FdisacRun *r);

// Achievable downlink rate (bits/s/Hz).
//
// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_rate(const struct FdisacRun *r, double *out);

// Rate of the communication-only precoder through the same beams.
//
// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_waterfilling_rate(const struct FdisacRun *r, double *out);

// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_n_targets(const struct FdisacRun *r, uintptr_t *out);

// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_target(const struct FdisacRun *r,
                                    uintptr_t i,
                                    struct FdisacTarget *out);

// Predicted sensing SINR of target `i` (dB).
//
// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_target_sinr_db(const struct FdisacRun *r, uintptr_t i, double *out);

// Number of radar estimates (zero when the run was made without sensing).
//
// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_n_estimates(const struct FdisacRun *r, uintptr_t *out);

// # Safety
// `r` must be a valid run handle and `out` a writable pointer.
enum FdisacStatus fdisac_run_estimate(const struct FdisacRun *r,
                                      uintptr_t i,
                                      struct FdisacEstimate *out);

// Run metrics as a JSON document.
//
// # Safety
// `r` must be a valid run handle and `out` a writable pointer. Release the
// string with [`fdisac_string_free`].
enum FdisacStatus fdisac_run_metrics_json(const struct FdisacRun *r, char **out);

// # Safety
// `out` must be a writable pointer.
enum FdisacStatus fdisac_budget_default(struct FdisacBudget *out);

// Largest range meeting the SINR target with the given combined gain.
//
// # Safety
// `b` must point to a budget and `out` be writable.
enum FdisacStatus fdisac_sensing_range(const struct FdisacBudget *b, double *out);

// Combined TX+RX gain (dB) needed to reach `range_m` at `sinr_db`.
//
// # Safety
// `b` must point to a budget and `out` be writable.
enum FdisacStatus fdisac_required_gain(const struct FdisacBudget *b,
                                       double range_m,
                                       double sinr_db,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDISAC_H */
