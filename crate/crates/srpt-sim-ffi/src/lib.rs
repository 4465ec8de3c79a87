//! C ABI surface over the simulator: opaque track handle, delay sampling and
//! a one-shot experiment runner returning summary metrics.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use srpt_sim::config::SimConfig;
use srpt_sim::harness::{run_experiment_with_cap, ExperimentSpec, Mode};
use srpt_sim::link::DelayModel;
use srpt_sim::scenario::track::build_track;
use srpt_sim::scenario::{NoiseSetId, TrackModel};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RunFailed = 3,
    Panic = 4,
}

/// Opaque track handle.
pub struct SrptTrack {
    inner: TrackModel,
}

/// Summary of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrptRunSummary {
    /// 1 when the vehicle left the corridor or never finished, else 0.
    pub diverged: i32,
    /// Simulated seconds covered by the log.
    pub lap_time: f64,
    /// Worst absolute cross-track error, m.
    pub max_abs_dy: f64,
    /// Number of 100 Hz log samples.
    pub samples: u64,
}

/// Creates the built-in 438 m test track. Free with `srpt_track_free`.
#[no_mangle]
pub extern "C" fn srpt_track_new() -> *mut SrptTrack {
    match catch_unwind(|| SrptTrack {
        inner: build_track(),
    }) {
        Ok(t) => Box::into_raw(Box::new(t)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Frees a track handle. Passing null is a no-op.
///
/// # Safety
/// `track` must be null or a pointer returned by `srpt_track_new` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn srpt_track_free(track: *mut SrptTrack) {
    if !track.is_null() {
        drop(Box::from_raw(track));
    }
}

/// Total centerline length in meters.
///
/// # Safety
/// `track` must be a live handle, `out_length` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srpt_track_length(
    track: *const SrptTrack,
    out_length: *mut f64,
) -> SrptStatus {
    if track.is_null() || out_length.is_null() {
        return SrptStatus::NullPointer;
    }
    *out_length = (*track).inner.total_length;
    SrptStatus::Ok
}

/// Centerline pose at an arclength (clamped to the track).
///
/// # Safety
/// `track` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srpt_track_pose_at(
    track: *const SrptTrack,
    s: f64,
    out_x: *mut f64,
    out_y: *mut f64,
    out_psi: *mut f64,
) -> SrptStatus {
    if track.is_null() || out_x.is_null() || out_y.is_null() || out_psi.is_null() {
        return SrptStatus::NullPointer;
    }
    if !s.is_finite() {
        return SrptStatus::InvalidArgument;
    }
    let p = (*track).inner.pose_at(s);
    *out_x = p.x;
    *out_y = p.y;
    *out_psi = p.psi;
    SrptStatus::Ok
}

/// Closest arclength and signed cross-track offset (positive left) of a
/// point.
///
/// # Safety
/// `track` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srpt_track_cross_track(
    track: *const SrptTrack,
    x: f64,
    y: f64,
    out_s: *mut f64,
    out_dy: *mut f64,
) -> SrptStatus {
    if track.is_null() || out_s.is_null() || out_dy.is_null() {
        return SrptStatus::NullPointer;
    }
    if !(x.is_finite() && y.is_finite()) {
        return SrptStatus::InvalidArgument;
    }
    let (s, dy) = (*track).inner.cross_track((x, y), None);
    *out_s = s;
    *out_dy = dy;
    SrptStatus::Ok
}

/// Draws `n` downlink delays with the default model into `out`.
///
/// # Safety
/// `out` must point to at least `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn srpt_delay_sample(seed: u64, n: usize, out: *mut f64) -> SrptStatus {
    if out.is_null() {
        return SrptStatus::NullPointer;
    }
    use rand::SeedableRng;
    let model = DelayModel::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let slice = std::slice::from_raw_parts_mut(out, n);
    for v in slice {
        *v = model.sample_downlink(&mut rng);
    }
    SrptStatus::Ok
}

unsafe fn parse_str<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Runs one experiment for up to `cap_seconds` of simulated time and fills
/// the summary. `mode` is "srpt-true", "srpt-ekf" or "driver"; `noise_set`
/// is "i" through "vi".
///
/// # Safety
/// `mode` and `noise_set` must be valid NUL-terminated strings and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srpt_run_experiment(
    mode: *const c_char,
    noise_set: *const c_char,
    delay_enabled: bool,
    seed: u64,
    cap_seconds: f64,
    out: *mut SrptRunSummary,
) -> SrptStatus {
    if out.is_null() {
        return SrptStatus::NullPointer;
    }
    let (Some(mode), Some(set)) = (parse_str(mode), parse_str(noise_set)) else {
        return SrptStatus::NullPointer;
    };
    let (Ok(mode), Ok(set)) = (mode.parse::<Mode>(), set.parse::<NoiseSetId>()) else {
        return SrptStatus::InvalidArgument;
    };
    if !(cap_seconds.is_finite() && cap_seconds > 0.0) {
        return SrptStatus::InvalidArgument;
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        let cfg = SimConfig::default();
        let track = build_track();
        let spec = ExperimentSpec::new(mode, set, delay_enabled, seed);
        run_experiment_with_cap(spec, &cfg, &track, cap_seconds)
    }));
    match result {
        Ok(Ok(log)) => {
            let max_abs_dy = log.rows.iter().map(|r| r.dy.abs()).fold(0.0f64, f64::max);
            *out = SrptRunSummary {
                diverged: log.diverged as i32,
                lap_time: log.lap_time,
                max_abs_dy,
                samples: log.rows.len() as u64,
            };
            SrptStatus::Ok
        }
        Ok(Err(_)) => SrptStatus::RunFailed,
        Err(_) => SrptStatus::Panic,
    }
}
