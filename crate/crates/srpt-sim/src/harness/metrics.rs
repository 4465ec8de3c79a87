//! Region-wise cross-track metrics, the short-window pose-divergence series
//! and the cross-mode comparison table.

use crate::error::SimError;
use crate::geometry::{relative_pose, wrap_angle, Pose};
use crate::harness::{ExperimentSpec, RunLog};
use crate::scenario::TrackModel;
use crate::vehicle::STEER_RATE_MAX;

/// Aggregates for one labeled region of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMetrics {
    pub label: char,
    pub max_abs_dy: f64,
    pub rms_dy: f64,
    /// Slowest true speed in the region, m/s.
    pub min_speed: f64,
    /// Slowest commanded speed in the region, m/s.
    pub min_v_cmd: f64,
    /// Sign changes of the applied steer rate while pinned at the rate bound.
    pub steer_reversals: u32,
    /// Worst sideslip estimation error in the region, rad.
    pub max_beta_err: f64,
    pub samples: usize,
    /// Cleared when the run diverged; the numbers then describe a partial lap.
    pub valid: bool,
}

/// Partitions the log by region and computes the per-region aggregates.
pub fn region_metrics(log: &RunLog, track: &TrackModel) -> Vec<RegionMetrics> {
    track
        .regions
        .iter()
        .map(|region| {
            let mut max_abs_dy = 0.0f64;
            let mut sum_sq = 0.0;
            let mut min_speed = f64::INFINITY;
            let mut min_v_cmd = f64::INFINITY;
            let mut max_beta_err = 0.0f64;
            let mut n = 0usize;
            let mut reversals = 0u32;
            let mut last_sat_sign = 0i8;
            for r in &log.rows {
                if r.s < region.s_start || r.s >= region.s_end {
                    continue;
                }
                n += 1;
                max_abs_dy = max_abs_dy.max(r.dy.abs());
                sum_sq += r.dy * r.dy;
                min_speed = min_speed.min(r.truth[5]);
                min_v_cmd = min_v_cmd.min(r.v_cmd);
                max_beta_err = max_beta_err.max((r.est[0] - r.truth[0]).abs());
                if r.u[0].abs() >= STEER_RATE_MAX - 1e-9 {
                    let sign = if r.u[0] > 0.0 { 1 } else { -1 };
                    if last_sat_sign != 0 && sign != last_sat_sign {
                        reversals += 1;
                    }
                    last_sat_sign = sign;
                }
            }
            RegionMetrics {
                label: region.label,
                max_abs_dy,
                rms_dy: if n > 0 { (sum_sq / n as f64).sqrt() } else { 0.0 },
                min_speed: if n > 0 { min_speed } else { 0.0 },
                min_v_cmd: if n > 0 { min_v_cmd } else { 0.0 },
                steer_reversals: reversals,
                max_beta_err,
                samples: n,
                valid: !log.diverged,
            }
        })
        .collect()
}

/// One sample of the sliding-window pose-divergence series: the estimated
/// relative pose over the window minus the true relative pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowError {
    pub t: f64,
    pub ex: f64,
    pub ey: f64,
    pub epsi: f64,
}

fn pose_from(a: &[f64; 9]) -> Pose {
    Pose::new(a[6], a[7], a[2])
}

/// Computes the window-divergence series with the given window (default
/// 0.3 s, the worst-case round trip). Samples earlier than one window into
/// the log are skipped.
pub fn divergence_window(log: &RunLog, window_seconds: f64) -> Vec<WindowError> {
    let offset = (window_seconds / 0.01).round() as usize;
    if log.rows.len() <= offset || offset == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(log.rows.len() - offset);
    for i in offset..log.rows.len() {
        let a = &log.rows[i - offset];
        let b = &log.rows[i];
        let est = relative_pose(&pose_from(&a.est), &pose_from(&b.est));
        let truth = relative_pose(&pose_from(&a.truth), &pose_from(&b.truth));
        out.push(WindowError {
            t: b.t,
            ex: est.dx - truth.dx,
            ey: est.dy - truth.dy,
            epsi: wrap_angle(est.dpsi - truth.dpsi),
        });
    }
    out
}

/// One row of the cross-mode summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub spec: ExperimentSpec,
    pub region: char,
    pub max_abs_dy: f64,
    pub rms_dy: f64,
}

/// Flattened region × run table; rejects grids whose runs used different
/// base seeds.
pub fn compare_modes(
    runs: &[(ExperimentSpec, Vec<RegionMetrics>)],
) -> Result<Vec<SummaryRow>, SimError> {
    if let Some((first, _)) = runs.first() {
        if runs.iter().any(|(s, _)| s.seed != first.seed) {
            return Err(SimError::MixedSeeds);
        }
    }
    let mut out = Vec::new();
    for (spec, regions) in runs {
        for m in regions {
            out.push(SummaryRow {
                spec: *spec,
                region: m.label,
                max_abs_dy: m.max_abs_dy,
                rms_dy: m.rms_dy,
            });
        }
    }
    Ok(out)
}

/// Delay-over-no-delay RMS ratio for a mode and region; the denominator is
/// floored to avoid inflating ratios of near-zero errors.
pub fn delay_ratio(with_delay: f64, without_delay: f64) -> f64 {
    with_delay / without_delay.max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Mode, RunRow};
    use crate::scenario::track::build_track;
    use crate::scenario::NoiseSetId;
    use approx::assert_abs_diff_eq;

    fn blank_row(t: f64, s: f64, dy: f64) -> RunRow {
        RunRow {
            t,
            truth: [0.0; 9],
            est: [0.0; 9],
            z: [0.0; 4],
            u: [0.0; 2],
            ref_pose: [0.0; 3],
            s,
            dy,
            v_cmd: 6.11,
            nmpc_iterations: 0,
        }
    }

    fn log_of(rows: Vec<RunRow>) -> RunLog {
        RunLog {
            spec: ExperimentSpec::new(Mode::SrptTrue, NoiseSetId::I, false, 1),
            rows,
            diverged: false,
            lap_time: 1.0,
        }
    }

    #[test]
    fn constant_and_alternating_dy() {
        let track = build_track();
        let a = track.regions[0];
        let mid = 0.5 * (a.s_start + a.s_end);
        // Constant 0.1 m.
        let rows: Vec<_> = (0..50)
            .map(|i| blank_row(i as f64 * 0.01, mid, 0.1))
            .collect();
        let m = &region_metrics(&log_of(rows), &track)[0];
        assert_abs_diff_eq!(m.max_abs_dy, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rms_dy, 0.1, epsilon = 1e-12);
        assert!(m.rms_dy <= m.max_abs_dy + 1e-12);
        // Alternating +/-0.1 m has the same max and RMS.
        let rows: Vec<_> = (0..50)
            .map(|i| blank_row(i as f64 * 0.01, mid, if i % 2 == 0 { 0.1 } else { -0.1 }))
            .collect();
        let m = &region_metrics(&log_of(rows), &track)[0];
        assert_abs_diff_eq!(m.max_abs_dy, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rms_dy, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn zero_error_log_gives_zeros() {
        let track = build_track();
        let a = track.regions[0];
        let rows: Vec<_> = (0..10)
            .map(|i| blank_row(i as f64 * 0.01, a.s_start + 0.1, 0.0))
            .collect();
        let m = &region_metrics(&log_of(rows), &track)[0];
        assert_eq!(m.max_abs_dy, 0.0);
        assert_eq!(m.rms_dy, 0.0);
        assert_eq!(m.steer_reversals, 0);
    }

    #[test]
    fn counts_saturated_reversals_only() {
        let track = build_track();
        let a = track.regions[0];
        let mid = 0.5 * (a.s_start + a.s_end);
        let mut rows = Vec::new();
        let seq = [
            STEER_RATE_MAX,
            -STEER_RATE_MAX,
            0.1, // unsaturated, ignored
            -STEER_RATE_MAX,
            STEER_RATE_MAX,
            STEER_RATE_MAX,
        ];
        for (i, u) in seq.iter().enumerate() {
            let mut r = blank_row(i as f64 * 0.01, mid, 0.0);
            r.u[0] = *u;
            rows.push(r);
        }
        let m = &region_metrics(&log_of(rows), &track)[0];
        assert_eq!(m.steer_reversals, 2);
    }

    #[test]
    fn window_zero_when_estimate_is_truth() {
        let mut rows = Vec::new();
        for i in 0..100 {
            let mut r = blank_row(i as f64 * 0.01, 1.0, 0.0);
            r.truth[6] = i as f64 * 0.0611;
            r.est = r.truth;
            rows.push(r);
        }
        let errs = divergence_window(&log_of(rows), 0.3);
        assert_eq!(errs.len(), 70);
        for e in errs {
            assert_abs_diff_eq!(e.ex, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(e.ey, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(e.epsi, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn window_frozen_estimator_shows_minus_travel() {
        // Truth advances 1 m within each 0.3 s window; the estimate stands
        // still, so the window error in x is exactly -1.
        let mut rows = Vec::new();
        for i in 0..60 {
            let mut r = blank_row(i as f64 * 0.01, 1.0, 0.0);
            r.truth[6] = i as f64 * (1.0 / 30.0);
            r.est = [0.0; 9];
            rows.push(r);
        }
        let errs = divergence_window(&log_of(rows), 0.3);
        for e in errs {
            assert_abs_diff_eq!(e.ex, -1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(e.ey, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn compare_modes_rejects_mixed_seeds() {
        let a = ExperimentSpec::new(Mode::SrptTrue, NoiseSetId::I, false, 1);
        let b = ExperimentSpec::new(Mode::Driver, NoiseSetId::I, false, 2);
        let err = compare_modes(&[(a, Vec::new()), (b, Vec::new())]);
        assert!(matches!(err, Err(SimError::MixedSeeds)));
    }

    #[test]
    fn compare_modes_identical_logs_ratio_one() {
        let track = build_track();
        let a = track.regions[0];
        let rows: Vec<_> = (0..20)
            .map(|i| blank_row(i as f64 * 0.01, 0.5 * (a.s_start + a.s_end), 0.05))
            .collect();
        let log = log_of(rows);
        let m = region_metrics(&log, &track);
        let s1 = ExperimentSpec::new(Mode::SrptTrue, NoiseSetId::I, false, 1);
        let s2 = ExperimentSpec::new(Mode::SrptTrue, NoiseSetId::I, true, 1);
        let table = compare_modes(&[(s1, m.clone()), (s2, m)]).unwrap();
        let r1 = table.iter().find(|r| !r.spec.delay_enabled).unwrap();
        let r2 = table.iter().find(|r| r.spec.delay_enabled).unwrap();
        assert_abs_diff_eq!(delay_ratio(r2.rms_dy, r1.rms_dy), 1.0, epsilon = 1e-12);
    }
}
