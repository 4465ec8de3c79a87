#ifndef SRPT_SIM_H
#define SRPT_SIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum SrptStatus {
  Ok = 0,
  NullPointer = 1,
  InvalidArgument = 2,
  RunFailed = 3,
  Panic = 4,
} SrptStatus;

/**
 * Opaque track handle.
 */
typedef struct SrptTrack SrptTrack;

/**
 * Summary of one run.
 */
typedef struct SrptRunSummary {
  /**
   * 1 when the vehicle left the corridor or never finished, else 0.
   */
  int32_t diverged;
  /**
   * Simulated seconds covered by the log.
   */
  double lap_time;
  /**
   * Worst absolute cross-track error, m.
   */
  double max_abs_dy;
  /**
   * Number of 100 Hz log samples.
   */
  uint64_t samples;
} SrptRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates the built-in 438 m test track. Free with `srpt_track_free`.
 */
struct SrptTrack *srpt_track_new(void);

/**
 * Frees a track handle. Passing null is a no-op.
 *
 * # Safety
 * `track` must be null or a pointer returned by `srpt_track_new` that has
 * not been freed yet.
 */
void srpt_track_free(struct SrptTrack *track);

/**
 * Total centerline length in meters.
 *
 * # Safety
 * `track` must be a live handle, `out_length` a valid pointer.
 */
enum SrptStatus srpt_track_length(const struct SrptTrack *track, double *out_length);

/**
 * Centerline pose at an arclength (clamped to the track).
 *
 * # Safety
 * `track` must be a live handle; output pointers must be valid.
 */
enum SrptStatus srpt_track_pose_at(const struct SrptTrack *track,
                                   double s,
                                   double *out_x,
                                   double *out_y,
                                   double *out_psi);

/**
 * Closest arclength and signed cross-track offset (positive left) of a
 * point.
 *
 * # Safety
 * `track` must be a live handle; output pointers must be valid.
 */
enum SrptStatus srpt_track_cross_track(const struct SrptTrack *track,
                                       double x,
                                       double y,
                                       double *out_s,
                                       double *out_dy);

/**
 * Draws `n` downlink delays with the default model into `out`.
 *
 * # Safety
 * `out` must point to at least `n` writable doubles.
 */
enum SrptStatus srpt_delay_sample(uint64_t seed, uintptr_t n, double *out);

/**
 * Runs one experiment for up to `cap_seconds` of simulated time and fills
 * the summary. `mode` is "srpt-true", "srpt-ekf" or "driver"; `noise_set`
 * is "i" through "vi".
 *
 * # Safety
 * `mode` and `noise_set` must be valid NUL-terminated strings and
 * `out` a valid pointer.
 */
enum SrptStatus srpt_run_experiment(const char *mode,
                                    const char *noise_set,
                                    bool delay_enabled,
                                    uint64_t seed,
                                    double cap_seconds,
                                    struct SrptRunSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRPT_SIM_H */
