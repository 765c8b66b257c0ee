#ifndef AKDV_H
#define AKDV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum AkdvStatus {
  AKDV_STATUS_OK = 0,
  AKDV_STATUS_NULL_POINTER = 1,
  AKDV_STATUS_INVALID_ARGUMENT = 2,
  AKDV_STATUS_OUT_OF_THEORY = 3,
  AKDV_STATUS_CONFIG = 4,
  AKDV_STATUS_NUMERICAL = 5,
  AKDV_STATUS_IO = 6,
  AKDV_STATUS_PANIC = 7,
} AkdvStatus;

// Opaque simulation handle.
typedef struct AkdvSimulation AkdvSimulation;

// Conserved and monitored quantities of the current field.
typedef struct AkdvInvariants {
  double t;
  // `½∫u²`
  double mass;
  // `½∫a^{1/m}u²`
  double mass_hat;
  // `E_a[u]`
  double energy;
  // `∫u`
  double l1;
  // `∫u²/a`
  double mass_back;
} AkdvInvariants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *akdv_last_error(void);

// Library version as a static NUL-terminated string.
const char *akdv_version(void);

// Limit scaling `c_∞(λ)` for exponent `m`.
//
// # Safety
// `out` must be valid for one write.
enum AkdvStatus akdv_c_infinity(uint32_t m, double lambda, double *out);

// `Q_c(x)` at `n` points.
//
// # Safety
// `x` must be valid for `n` reads and `out` for `n` writes.
enum AkdvStatus akdv_eval_q(uint32_t m, double c, const double *x, size_t n, double *out);

// Simulation from the text of a scenario file, positioned at `-T_ε`.
//
// # Safety
// `config` must be a NUL-terminated string and `out` valid for one write.
enum AkdvStatus akdv_simulation_from_config(const char *config,
                                            int allow_out_of_theory,
                                            struct AkdvSimulation **out);

// Default scenario with the given model parameters and run horizon (in
// units of `T_ε`).
//
// # Safety
// `out` must be valid for one write.
enum AkdvStatus akdv_simulation_new(uint32_t m,
                                    double lambda,
                                    double epsilon,
                                    double horizon,
                                    struct AkdvSimulation **out);

// Releases a handle; null is ignored.
//
// # Safety
// `sim` must come from this library and not be used afterwards.
void akdv_simulation_free(struct AkdvSimulation *sim);

// Number of grid nodes.
//
// # Safety
// `sim` must be a live handle and `n` valid for one write.
enum AkdvStatus akdv_simulation_len(const struct AkdvSimulation *sim, size_t *n);

// Grid bounds `[x_min, x_max)`.
//
// # Safety
// `sim` must be a live handle; `x_min` and `x_max` valid for one write.
enum AkdvStatus akdv_simulation_bounds(const struct AkdvSimulation *sim,
                                       double *x_min,
                                       double *x_max);

// Current time and the time at which the run ends.
//
// # Safety
// `sim` must be a live handle; `t` and `t_end` valid for one write.
enum AkdvStatus akdv_simulation_time(const struct AkdvSimulation *sim, double *t, double *t_end);

// Steps until `target` (or the end of the run).
//
// # Safety
// `sim` must be a live handle not shared with another thread.
enum AkdvStatus akdv_simulation_advance(struct AkdvSimulation *sim, double target);

// Copies the field into `out`, which must hold exactly `n` values.
//
// # Safety
// `sim` must be a live handle and `out` valid for `n` writes.
enum AkdvStatus akdv_simulation_field(const struct AkdvSimulation *sim, double *out, size_t n);

// Invariants of the current field.
//
// # Safety
// `sim` must be a live handle and `out` valid for one write.
enum AkdvStatus akdv_simulation_invariants(const struct AkdvSimulation *sim,
                                           struct AkdvInvariants *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AKDV_H */
