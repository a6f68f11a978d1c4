#ifndef HYDRO_H
#define HYDRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum HydroStatus {
  HYDRO_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HYDRO_STATUS_NULL_POINTER = 1,
  /**
   * Bad configuration text, key or value.
   */
  HYDRO_STATUS_CONFIG = 2,
  /**
   * Failure while stepping (tangling, rejections, solver).
   */
  HYDRO_STATUS_RUNTIME = 3,
  /**
   * Caller buffer too small.
   */
  HYDRO_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * Input that is not valid UTF-8.
   */
  HYDRO_STATUS_UTF8 = 5,
  /**
   * Rust panic caught at the boundary.
   */
  HYDRO_STATUS_PANIC = 6,
} HydroStatus;

/**
 * Opaque simulation handle.
 */
typedef struct HydroSim HydroSim;

/**
 * Energy and momentum totals, see `hydro_sim_report`.
 */
typedef struct HydroReport {
  double kinetic_energy;
  double internal_energy;
  double total_energy;
  double momentum[3];
  double boundary_violation;
} HydroReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a simulation from configuration text. On success `*out` owns a
 * handle that must be released with `hydro_sim_free`.
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be null or
 * point to writable storage for one pointer.
 */
enum HydroStatus hydro_sim_new(const char *config, struct HydroSim **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from `hydro_sim_new` not yet freed.
 */
void hydro_sim_free(struct HydroSim *sim);

/**
 * Take one time step. Returns `Ok` without stepping once the final time is
 * reached. `dt_out` may be null.
 *
 * # Safety
 * `sim` must be a live handle; `dt_out` null or writable.
 */
enum HydroStatus hydro_sim_step(struct HydroSim *sim, double *dt_out);

/**
 * Step until the final time from the configuration.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum HydroStatus hydro_sim_run(struct HydroSim *sim);

/**
 * Current time, or NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double hydro_sim_time(const struct HydroSim *sim);

/**
 * Accepted steps so far, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t hydro_sim_step_count(const struct HydroSim *sim);

/**
 * Spatial dimension, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t hydro_sim_dim(const struct HydroSim *sim);

/**
 * Number of kinematic nodes, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t hydro_sim_node_count(const struct HydroSim *sim);

/**
 * Fill `*out` with the current conservation totals.
 *
 * # Safety
 * `sim` must be a live handle; `out` writable.
 */
enum HydroStatus hydro_sim_report(const struct HydroSim *sim, struct HydroReport *out);

/**
 * Shock-front radius of the current state (2D problems), NaN if none.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double hydro_sim_shock_radius(const struct HydroSim *sim);

/**
 * Copy node positions (interleaved, `dim * node_count` values) into `buf`.
 *
 * # Safety
 * `sim` must be a live handle; `buf` must hold `len` doubles.
 */
enum HydroStatus hydro_sim_positions(const struct HydroSim *sim, double *buf, size_t len);

/**
 * Copy node velocities (interleaved) into `buf`.
 *
 * # Safety
 * As for `hydro_sim_positions`.
 */
enum HydroStatus hydro_sim_velocities(const struct HydroSim *sim, double *buf, size_t len);

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *hydro_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYDRO_H */
