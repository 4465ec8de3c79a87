//! Offline process-covariance tuning: replay a recorded lap through the EKF
//! and minimize the relative-pose prediction error over a sliding window with
//! a derivative-free simplex search on log-variances.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::SimError;
use crate::estimation::{
    ekf_predict, ekf_update, EkfBelief, MeasurementCovariance, MeasurementVector,
    ProcessCovariance,
};
use crate::geometry::{relative_pose, Pose};
use crate::vehicle::{ControlCommand, VehicleParams, VehicleState, STATE_DIM};

/// Tunable state indices: beta, yaw rate, FyF, FyR, Vx, delta. The pose
/// variances stay pinned because those states are unobservable.
pub const FREE_INDICES: [usize; 6] = [0, 1, 3, 4, 5, 8];
const POSE_INDICES: [usize; 3] = [2, 6, 7];
/// Pinned pose variance per prediction step: 1^2 / 10.
const PINNED_POSE_VARIANCE: f64 = 0.1;

const PREDICTS_PER_ROW: usize = 10;
const PREDICT_DT: f64 = 0.001;

#[derive(Debug, Clone, Copy)]
pub struct TuningConfig {
    pub window_seconds: f64,
    pub w_position: f64,
    pub w_heading: f64,
    /// Cap on simplex cost evaluations.
    pub max_evals: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            window_seconds: 0.3,
            w_position: 1.0,
            w_heading: 1e-2,
            max_evals: 600,
        }
    }
}

/// One 100 Hz sample of a recorded lap.
#[derive(Debug, Clone, Copy)]
pub struct LapRow {
    pub t: f64,
    pub truth: VehicleState,
    pub z: MeasurementVector,
    pub u: ControlCommand,
}

#[derive(Debug, Clone, Default)]
pub struct LapLog {
    pub rows: Vec<LapRow>,
}

pub const LAP_LOG_HEADER: &str = "t,true_beta,true_yaw_rate,true_heading,true_fy_f,true_fy_r,true_vx,true_x,true_y,true_delta,z_ay,z_yaw_rate,z_vx,z_delta,u_steer_rate,u_accel";

impl LapLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{LAP_LOG_HEADER}")?;
        for r in &self.rows {
            let s = r.truth.to_array();
            let z = r.z.to_array();
            write!(f, "{:.6}", r.t)?;
            for v in s.iter().chain(z.iter()) {
                write!(f, ",{:.9e}", v)?;
            }
            writeln!(f, ",{:.9e},{:.9e}", r.u.steer_rate, r.u.accel)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, SimError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::Config("empty lap log".into()))??;
        let names: Vec<&str> = header.trim().split(',').collect();
        let want: Vec<&str> = LAP_LOG_HEADER.split(',').collect();
        // Column lookup by name so richer trace files also load.
        let idx: Vec<usize> = want
            .iter()
            .map(|w| {
                names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| SimError::Config(format!("lap log missing column {w}")))
            })
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .trim()
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SimError::Config(format!("bad lap log value: {e}")))?;
            let get = |k: usize| fields[idx[k]];
            let mut truth = [0.0; STATE_DIM];
            for (i, t) in truth.iter_mut().enumerate() {
                *t = get(1 + i);
            }
            rows.push(LapRow {
                t: get(0),
                truth: VehicleState::from_array(&truth),
                z: MeasurementVector::from_array(&[get(10), get(11), get(12), get(13)]),
                u: ControlCommand {
                    steer_rate: get(14),
                    accel: get(15),
                },
            });
        }
        Ok(Self { rows })
    }
}

/// Writes a tuned Q as a key=value file (variance per prediction step).
pub fn write_q_file(q: &ProcessCovariance, path: &Path) -> Result<(), SimError> {
    let names = [
        "beta", "yaw_rate", "heading", "fy_f", "fy_r", "vx", "x", "y", "delta",
    ];
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (name, v) in names.iter().zip(q.diag) {
        writeln!(f, "q.{name}={:.9e}", v)?;
    }
    Ok(())
}

fn pose_of(x: &VehicleState) -> Pose {
    x.pose()
}

/// Replays the EKF over the log and returns the posterior pose per row.
fn replay_poses(
    log: &LapLog,
    q: &ProcessCovariance,
    r: &MeasurementCovariance,
    p: &VehicleParams,
) -> Result<Vec<Pose>, SimError> {
    let mut belief = EkfBelief::initialize(log.rows[0].truth);
    let mut poses = Vec::with_capacity(log.rows.len());
    poses.push(pose_of(&belief.xhat));
    for k in 1..log.rows.len() {
        let u = log.rows[k - 1].u;
        for _ in 0..PREDICTS_PER_ROW {
            belief = ekf_predict(&belief, &u, PREDICT_DT, q, p)?;
        }
        belief = ekf_update(&belief, &log.rows[k].z, r, p)?;
        poses.push(pose_of(&belief.xhat));
    }
    Ok(poses)
}

/// Relative-pose window errors between an estimated and a true pose series.
pub fn window_errors(
    est: &[Pose],
    truth: &[Pose],
    window_rows: usize,
) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for k in window_rows..est.len() {
        let re = relative_pose(&est[k - window_rows], &est[k]);
        let rt = relative_pose(&truth[k - window_rows], &truth[k]);
        out.push((re.dx - rt.dx, re.dy - rt.dy, crate::geometry::wrap_angle(re.dpsi - rt.dpsi)));
    }
    out
}

/// The tuning objective: weighted RMS of windowed relative-pose errors.
pub fn window_cost(errors: &[(f64, f64, f64)], cfg: &TuningConfig) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let n = errors.len() as f64;
    let (pos_sq, head_sq) = errors.iter().fold((0.0, 0.0), |(p, h), (ex, ey, epsi)| {
        (p + ex * ex + ey * ey, h + epsi * epsi)
    });
    cfg.w_position * (pos_sq / n).sqrt() + cfg.w_heading * (head_sq / n).sqrt()
}

/// Cost of a candidate Q on a recorded lap.
pub fn evaluate_q(
    log: &LapLog,
    q: &ProcessCovariance,
    cfg: &TuningConfig,
    r: &MeasurementCovariance,
    p: &VehicleParams,
) -> Result<f64, SimError> {
    let window_rows = window_rows(log, cfg)?;
    let est = replay_poses(log, q, r, p)?;
    let truth: Vec<Pose> = log.rows.iter().map(|r| pose_of(&r.truth)).collect();
    Ok(window_cost(&window_errors(&est, &truth, window_rows), cfg))
}

fn window_rows(log: &LapLog, cfg: &TuningConfig) -> Result<usize, SimError> {
    if log.rows.len() < 2 {
        return Err(SimError::LogTooShort {
            got: log.rows.len(),
            need: 2,
        });
    }
    let dt = (log.rows[1].t - log.rows[0].t).max(1e-9);
    let rows = (cfg.window_seconds / dt).round() as usize;
    if log.rows.len() <= rows {
        return Err(SimError::LogTooShort {
            got: log.rows.len(),
            need: rows + 1,
        });
    }
    Ok(rows)
}

fn q_from_theta(theta: &[f64; 6]) -> ProcessCovariance {
    let mut diag = [0.0; STATE_DIM];
    for i in POSE_INDICES {
        diag[i] = PINNED_POSE_VARIANCE;
    }
    for (slot, idx) in FREE_INDICES.iter().enumerate() {
        diag[*idx] = theta[slot].exp();
    }
    ProcessCovariance { diag }
}

/// Result of a tuning run.
#[derive(Debug, Clone, Copy)]
pub struct TuningOutcome {
    pub q: ProcessCovariance,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub evaluations: usize,
}

/// Tunes the six observable-state variances with Nelder-Mead on
/// log-variances; pose variances stay pinned at 1^2/10.
pub fn tune_process_covariance(
    log: &LapLog,
    q0: &ProcessCovariance,
    cfg: &TuningConfig,
    r: &MeasurementCovariance,
    p: &VehicleParams,
) -> Result<TuningOutcome, SimError> {
    window_rows(log, cfg)?;

    let mut theta0 = [0.0; 6];
    for (slot, idx) in FREE_INDICES.iter().enumerate() {
        theta0[slot] = q0.diag[*idx].max(1e-300).ln();
    }

    let evals = std::cell::Cell::new(0usize);
    let cost_of = |theta: &[f64; 6]| -> Result<f64, SimError> {
        evals.set(evals.get() + 1);
        // A candidate that blows up the filter is treated as infinitely bad
        // rather than aborting the search.
        match evaluate_q(log, &q_from_theta(theta), cfg, r, p) {
            Ok(c) if c.is_finite() => Ok(c),
            Ok(_) => Ok(f64::INFINITY),
            Err(SimError::CovarianceNotPsd(_)) | Err(SimError::SingularInnovation) => {
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    };

    let initial_cost = cost_of(&theta0)?;

    // Initial simplex: large log-space steps, the optimum can be orders of
    // magnitude away per axis.
    let mut simplex: Vec<([f64; 6], f64)> = Vec::with_capacity(7);
    simplex.push((theta0, initial_cost));
    for i in 0..6 {
        let mut v = theta0;
        v[i] += 3.0;
        let c = cost_of(&v)?;
        simplex.push((v, c));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals.get() < cfg.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[6].1;
        if worst.is_finite() && (worst - best).abs() < 1e-9 * best.abs().max(1e-12) {
            break;
        }
        let mut centroid = [0.0; 6];
        for (v, _) in &simplex[..6] {
            for i in 0..6 {
                centroid[i] += v[i] / 6.0;
            }
        }
        let reflect = |t: f64| {
            let mut v = [0.0; 6];
            for i in 0..6 {
                v[i] = centroid[i] + t * (centroid[i] - simplex[6].0[i]);
            }
            v
        };
        let xr = reflect(alpha);
        let fr = cost_of(&xr)?;
        if fr < simplex[0].1 {
            let xe = reflect(gamma);
            let fe = cost_of(&xe)?;
            simplex[6] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[5].1 {
            simplex[6] = (xr, fr);
        } else {
            let xc = reflect(-rho);
            let fc = cost_of(&xc)?;
            if fc < simplex[6].1 {
                simplex[6] = (xc, fc);
            } else {
                let best_v = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    for i in 0..6 {
                        entry.0[i] = best_v[i] + sigma * (entry.0[i] - best_v[i]);
                    }
                    entry.1 = cost_of(&entry.0)?;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(TuningOutcome {
        q: q_from_theta(&simplex[0].0),
        initial_cost,
        final_cost: simplex[0].1,
        evaluations: evals.get(),
    })
}
