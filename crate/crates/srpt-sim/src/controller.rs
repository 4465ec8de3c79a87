//! Shooting NMPC that tracks the received reference poses at 50 Hz under the
//! steer-rate and acceleration bounds.

use std::collections::VecDeque;

use crate::error::SimError;
use crate::geometry::{lerp_angle, wrap_angle, Pose};
use crate::operator::ReferencePoseMessage;
use crate::vehicle::{
    integrate_estimator_model, ControlCommand, VehicleParams, VehicleState, ACCEL_MIN,
    STEER_RATE_MAX,
};

/// A reference message together with the local time it arrived, which is
/// what anchors the message on the tracking horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferedReference {
    pub msg: ReferencePoseMessage,
    pub received_at: f64,
}

/// Ring of recent reference poses, newest last.
#[derive(Debug, Clone, Default)]
pub struct ReferenceBuffer {
    items: VecDeque<BufferedReference>,
}

impl ReferenceBuffer {
    pub const CAPACITY: usize = 64;
    pub const MAX_AGE: f64 = 3.0;

    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a message received at `now`; anything not strictly newer than
    /// the newest entry is discarded so timestamps stay strictly increasing.
    pub fn push(&mut self, msg: ReferencePoseMessage, now: f64) {
        if let Some(last) = self.items.back() {
            if msg.created_at <= last.msg.created_at {
                return;
            }
        }
        if self.items.len() == Self::CAPACITY {
            self.items.pop_front();
        }
        self.items.push_back(BufferedReference {
            msg,
            received_at: now,
        });
    }

    /// Drops entries older than the 3 s staleness horizon.
    pub fn evict_stale(&mut self, now: f64) {
        while let Some(front) = self.items.front() {
            if now - front.msg.created_at > Self::MAX_AGE {
                self.items.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn newest(&self) -> Option<&BufferedReference> {
        self.items.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferedReference> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Horizon length, node count, bounds (fixed by the command type) and cost
/// weights of the tracking controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcConfig {
    pub horizon_seconds: f64,
    pub steps: usize,
    pub w_pos: f64,
    pub w_head: f64,
    pub w_speed: f64,
    pub w_input_steer: f64,
    pub w_input_accel: f64,
    /// Speed-target cap, m/s.
    pub v_ref: f64,
    pub max_iterations: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon_seconds: 1.0,
            steps: 20,
            w_pos: 1.0,
            // Heading and steer-input weights are high on purpose: on the
            // low-adhesion corner the position term alone drives the front
            // axle deep into tire saturation, while a heading-led, rate-damped
            // solution keeps the commanded slip small and the whole loop
            // insensitive to estimation drift entering through the reference
            // composition.
            w_head: 4.0,
            // Strong enough that the position term cannot command a speed
            // runaway when tracking degrades on low-adhesion corners.
            w_speed: 4.0,
            w_input_steer: 2.0,
            w_input_accel: 0.05,
            v_ref: 6.11,
            max_iterations: 30,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps < 2 {
            return Err(SimError::Config("nmpc needs at least 2 nodes".into()));
        }
        if self.horizon_seconds / (self.steps as f64) < 0.001 {
            return Err(SimError::Config("nmpc node shorter than the plant step".into()));
        }
        let weights = [
            self.w_pos,
            self.w_head,
            self.w_speed,
            self.w_input_steer,
            self.w_input_accel,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SimError::Config("nmpc weights must be non-negative".into()));
        }
        if !(self.v_ref.is_finite() && self.v_ref > 0.0) {
            return Err(SimError::Config("v_ref must be positive".into()));
        }
        Ok(())
    }

    pub fn node_dt(&self) -> f64 {
        self.horizon_seconds / self.steps as f64
    }

    fn substeps(&self) -> usize {
        (self.node_dt() / 0.001).round().max(1.0) as usize
    }
}

/// Per-node tracking targets over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReference {
    /// N + 1 poses, index 0 at the current time.
    pub poses: Vec<Pose>,
    /// Common speed target, m/s.
    pub v_target: f64,
}

/// Interpolates the horizon targets from the buffered reference poses.
///
/// The current estimated pose anchors fraction 0; each received pose is
/// placed at the horizon fraction matching its arrival time, so a message
/// received one horizon ago sits at fraction 0 and a message received right
/// now at fraction 1. If the newest message is already slightly stale its
/// knot lands short of fraction 1 and the schedule is extended along its
/// heading at the capped reference speed, keeping the terminal pose exactly
/// one horizon of travel away instead of stretching the whole schedule. The
/// speed target is the straight-line distance to the terminal pose over the
/// horizon, capped at the reference speed.
pub fn build_horizon_reference(
    buf: &ReferenceBuffer,
    xhat: &VehicleState,
    cfg: &NmpcConfig,
    now: f64,
) -> Option<HorizonReference> {
    let newest = buf.newest()?;
    let mut knots: Vec<(f64, Pose)> = vec![(0.0, xhat.pose())];
    for entry in buf.iter() {
        let frac = 1.0 - (now - entry.received_at) / cfg.horizon_seconds;
        if frac > 0.0 && frac <= 1.0 {
            knots.push((frac, entry.msg.pose));
        }
    }
    if knots.len() == 1 {
        // Every message predates the horizon; aim at the newest pose at the
        // end of the horizon rather than flying blind.
        knots.push((1.0, newest.msg.pose));
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (f_last, p_last) = *knots.last().unwrap();
    if f_last < 1.0 {
        // Continue along the newest heading at the reference speed; aiming
        // at the cap here is what pulls the pace back up after a maneuver
        // forced the vehicle below it.
        let adv = cfg.v_ref * (1.0 - f_last) * cfg.horizon_seconds;
        knots.push((
            1.0,
            Pose::new(
                p_last.x + adv * p_last.psi.cos(),
                p_last.y + adv * p_last.psi.sin(),
                p_last.psi,
            ),
        ));
    }

    let n = cfg.steps;
    let mut poses = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let f = k as f64 / n as f64;
        let seg = knots
            .windows(2)
            .find(|w| f <= w[1].0)
            .unwrap_or(&knots[knots.len() - 2..]);
        let (f0, p0) = seg[0];
        let (f1, p1) = seg[1];
        let t = if f1 > f0 { (f - f0) / (f1 - f0) } else { 1.0 };
        poses.push(Pose::new(
            p0.x + (p1.x - p0.x) * t,
            p0.y + (p1.y - p0.y) * t,
            lerp_angle(p0.psi, p1.psi, t),
        ));
    }

    let terminal = poses[n];
    let dist = ((terminal.x - xhat.x).powi(2) + (terminal.y - xhat.y).powi(2)).sqrt();
    let v_target = (dist / cfg.horizon_seconds).min(cfg.v_ref);
    Some(HorizonReference { poses, v_target })
}

/// Integrates the command sequence through the prediction model at 1 ms
/// substeps, returning the N + 1 node states.
pub fn rollout(
    x0: &VehicleState,
    useq: &[ControlCommand],
    cfg: &NmpcConfig,
    p: &VehicleParams,
) -> Result<Vec<VehicleState>, SimError> {
    let sub = cfg.substeps();
    let dt = cfg.node_dt() / sub as f64;
    let mut states = Vec::with_capacity(useq.len() + 1);
    let mut x = *x0;
    states.push(x);
    for u in useq {
        for _ in 0..sub {
            x = integrate_estimator_model(&x, u, dt, p)?;
        }
        states.push(x);
    }
    Ok(states)
}

/// Result of one solve: the command plan, its exact model rollout, and solver
/// telemetry.
#[derive(Debug, Clone)]
pub struct NmpcSolution {
    pub commands: Vec<ControlCommand>,
    pub trajectory: Vec<VehicleState>,
    pub cost: f64,
    pub speed_target: f64,
    pub iterations: usize,
    /// Set when the solver had no usable reference and held its last command.
    pub degraded: bool,
}

impl NmpcSolution {
    pub fn first_command(&self) -> ControlCommand {
        self.commands.first().copied().unwrap_or_default()
    }

    /// Slowest speed along the planned trajectory, m/s.
    pub fn min_planned_speed(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|s| s.vx)
            .fold(f64::INFINITY, f64::min)
    }
}

fn stage_cost(x: &VehicleState, r: &Pose, v_target: f64, cfg: &NmpcConfig, terminal: bool) -> f64 {
    let dp = (x.x - r.x).powi(2) + (x.y - r.y).powi(2);
    let dh = wrap_angle(x.heading - r.psi).powi(2);
    let dv = (x.vx - v_target).powi(2);
    let c = cfg.w_pos * dp + cfg.w_head * dh + cfg.w_speed * dv;
    if terminal {
        c * 10.0
    } else {
        c
    }
}

fn input_cost(u: &ControlCommand, cfg: &NmpcConfig) -> f64 {
    cfg.w_input_steer * u.steer_rate * u.steer_rate + cfg.w_input_accel * u.accel * u.accel
}

/// Node states plus the per-node cost breakdown of one rollout.
struct CostedRollout {
    states: Vec<VehicleState>,
    /// stage_costs[k] is the tracking cost at node k; index 0 is always 0.
    stage_costs: Vec<f64>,
    input_costs: Vec<f64>,
    total: f64,
}

fn costed_rollout(
    x0: &VehicleState,
    useq: &[ControlCommand],
    href: &HorizonReference,
    cfg: &NmpcConfig,
    p: &VehicleParams,
) -> Result<CostedRollout, SimError> {
    let states = rollout(x0, useq, cfg, p)?;
    let n = useq.len();
    let mut stage_costs = vec![0.0; n + 1];
    for k in 1..=n {
        stage_costs[k] = stage_cost(&states[k], &href.poses[k], href.v_target, cfg, k == n);
    }
    let input_costs: Vec<f64> = useq.iter().map(|u| input_cost(u, cfg)).collect();
    let total = stage_costs.iter().sum::<f64>() + input_costs.iter().sum::<f64>();
    Ok(CostedRollout {
        states,
        stage_costs,
        input_costs,
        total,
    })
}

/// Tracking cost of nodes start+1..=N when re-integrating from the cached
/// state at `start` with the (partially modified) command tail.
fn suffix_cost(
    start: usize,
    x_start: &VehicleState,
    useq: &[ControlCommand],
    href: &HorizonReference,
    cfg: &NmpcConfig,
    p: &VehicleParams,
) -> Result<f64, SimError> {
    let sub = cfg.substeps();
    let dt = cfg.node_dt() / sub as f64;
    let n = useq.len();
    let mut x = *x_start;
    let mut cost = 0.0;
    for (k, u) in useq.iter().enumerate().skip(start) {
        for _ in 0..sub {
            x = integrate_estimator_model(&x, u, dt, p)?;
        }
        cost += stage_cost(&x, &href.poses[k + 1], href.v_target, cfg, k + 1 == n);
    }
    Ok(cost)
}

const FD_EPS: f64 = 1e-5;

/// Forward-difference cost gradient reusing the baseline rollout: perturbing
/// the command at node k only re-integrates nodes k..N.
fn cost_gradient(
    base: &CostedRollout,
    useq: &[ControlCommand],
    href: &HorizonReference,
    cfg: &NmpcConfig,
    p: &VehicleParams,
) -> Result<Vec<f64>, SimError> {
    let n = useq.len();
    let mut grad = vec![0.0; 2 * n];
    let mut prefix = vec![0.0; n + 1];
    for k in 1..=n {
        prefix[k] = prefix[k - 1] + base.stage_costs[k];
    }
    for k in 0..n {
        for c in 0..2 {
            let mut u2 = useq[k];
            let (value, hi, lo) = if c == 0 {
                (u2.steer_rate, STEER_RATE_MAX, -STEER_RATE_MAX)
            } else {
                (u2.accel, crate::vehicle::ACCEL_MAX, ACCEL_MIN)
            };
            // Step away from an active bound so the perturbed point stays
            // feasible.
            let eps = if value + FD_EPS > hi {
                -FD_EPS
            } else {
                let _ = lo;
                FD_EPS
            };
            if c == 0 {
                u2.steer_rate += eps;
            } else {
                u2.accel += eps;
            }
            let mut tail: Vec<ControlCommand> = useq.to_vec();
            tail[k] = u2;
            let suffix = suffix_cost(k, &base.states[k], &tail, href, cfg, p)?;
            let total = prefix[k] + suffix + base.input_costs.iter().sum::<f64>()
                - base.input_costs[k]
                + input_cost(&u2, cfg);
            grad[2 * k + c] = (total - base.total) / eps;
        }
    }
    Ok(grad)
}

fn apply_step(useq: &[ControlCommand], grad: &[f64], alpha: f64) -> Vec<ControlCommand> {
    useq.iter()
        .enumerate()
        .map(|(k, u)| {
            ControlCommand {
                steer_rate: u.steer_rate - alpha * grad[2 * k],
                accel: u.accel - alpha * grad[2 * k + 1],
            }
            .clamped()
        })
        .collect()
}

/// The 50 Hz tracking controller with warm start across calls.
pub struct NmpcController {
    pub cfg: NmpcConfig,
    params: VehicleParams,
    warm: Option<Vec<ControlCommand>>,
    last_command: ControlCommand,
}

impl NmpcController {
    pub fn new(cfg: NmpcConfig, params: VehicleParams) -> Result<Self, SimError> {
        cfg.validate()?;
        params.validate()?;
        Ok(Self {
            cfg,
            params,
            warm: None,
            last_command: ControlCommand::default(),
        })
    }

    /// Zero steer with maximum braking, used when the solver cannot produce a
    /// finite cost.
    fn fallback(&self, x0: &VehicleState) -> NmpcSolution {
        let commands = vec![
            ControlCommand {
                steer_rate: 0.0,
                accel: ACCEL_MIN,
            };
            self.cfg.steps
        ];
        let trajectory = rollout(x0, &commands, &self.cfg, &self.params)
            .unwrap_or_else(|_| vec![*x0; self.cfg.steps + 1]);
        NmpcSolution {
            commands,
            trajectory,
            cost: f64::INFINITY,
            speed_target: 0.0,
            iterations: 0,
            degraded: true,
        }
    }

    /// One solve: projected-gradient descent on the shooting parameters,
    /// warm-started from the previous plan shifted one node.
    pub fn solve(&mut self, xhat: &VehicleState, buf: &ReferenceBuffer, now: f64) -> NmpcSolution {
        let n = self.cfg.steps;
        let Some(href) = build_horizon_reference(buf, xhat, &self.cfg, now) else {
            // No reference yet: hold the last command and flag it.
            let commands = vec![self.last_command; n];
            let trajectory = rollout(xhat, &commands, &self.cfg, &self.params)
                .unwrap_or_else(|_| vec![*xhat; n + 1]);
            return NmpcSolution {
                commands,
                trajectory,
                cost: f64::INFINITY,
                speed_target: 0.0,
                iterations: 0,
                degraded: true,
            };
        };

        let mut useq = match self.warm.take() {
            Some(mut w) if w.len() == n => {
                w.rotate_left(1);
                w[n - 1] = w[n - 2];
                w
            }
            _ => vec![ControlCommand::default(); n],
        };
        useq = useq.iter().map(|u| u.clamped()).collect();

        let mut base = match costed_rollout(xhat, &useq, &href, &self.cfg, &self.params) {
            Ok(r) if r.total.is_finite() => r,
            _ => return self.fallback(xhat),
        };

        let mut alpha = 1.0;
        let mut iterations = 0;
        for _ in 0..self.cfg.max_iterations {
            iterations += 1;
            let grad = match cost_gradient(&base, &useq, &href, &self.cfg, &self.params) {
                Ok(g) => g,
                Err(_) => break,
            };
            if grad.iter().any(|g| !g.is_finite()) {
                break;
            }
            let mut improved = false;
            for _ in 0..10 {
                let trial = apply_step(&useq, &grad, alpha);
                match costed_rollout(xhat, &trial, &href, &self.cfg, &self.params) {
                    Ok(r) if r.total.is_finite() && r.total < base.total => {
                        let gain = base.total - r.total;
                        useq = trial;
                        base = r;
                        alpha = (alpha * 1.5).min(50.0);
                        // A vanishing gain means converged to working
                        // precision; stop iterating.
                        improved = gain >= 1e-4 * (1.0 + base.total);
                        break;
                    }
                    _ => alpha *= 0.25,
                }
            }
            if !improved {
                break;
            }
        }

        if !base.total.is_finite() {
            return self.fallback(xhat);
        }
        self.warm = Some(useq.clone());
        self.last_command = useq[0];
        NmpcSolution {
            commands: useq,
            trajectory: base.states,
            cost: base.total,
            speed_target: href.v_target,
            iterations,
            degraded: false,
        }
    }
}
