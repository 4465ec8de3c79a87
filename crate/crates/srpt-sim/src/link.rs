//! Network between vehicle and operator: GEV-distributed downlink delay,
//! constant uplink delay, in-order timestamped channels and the 1 ms-grid
//! multirate scheduler.

use rand::Rng;

use crate::error::SimError;

/// Downlink/uplink delay parameters.
///
/// The downlink delay follows a generalized extreme value distribution with
/// positive shape, which gives a finite lower bound mu - sigma/xi and a heavy
/// right tail; draws above `clamp_max` are clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    /// GEV shape.
    pub xi: f64,
    /// GEV location, s.
    pub mu_gev: f64,
    /// GEV scale, s.
    pub sigma_gev: f64,
    /// Hard cap on the downlink delay, s.
    pub clamp_max: f64,
    /// Constant uplink delay, s.
    pub uplink_delay: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            xi: 0.29,
            mu_gev: 0.200,
            sigma_gev: 0.009,
            clamp_max: 0.300,
            uplink_delay: 0.060,
        }
    }
}

impl DelayModel {
    /// Analytic lower bound of the GEV with positive shape.
    pub fn lower_bound(&self) -> f64 {
        self.mu_gev - self.sigma_gev / self.xi
    }

    /// Median of the clamped distribution (closed-form GEV quantile at 1/2).
    pub fn median(&self) -> f64 {
        self.quantile(0.5).min(self.clamp_max)
    }

    fn quantile(&self, u: f64) -> f64 {
        self.mu_gev + self.sigma_gev * ((-u.ln()).powf(-self.xi) - 1.0) / self.xi
    }

    /// Draws one downlink delay by inverse-transform sampling, clamped to
    /// [lower bound, clamp_max].
    pub fn sample_downlink<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let raw = self.quantile(u);
        raw.clamp(self.lower_bound(), self.clamp_max)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.xi <= 0.0 || self.sigma_gev <= 0.0 {
            return Err(SimError::Config("GEV shape and scale must be positive".into()));
        }
        if self.lower_bound() <= 0.0 {
            return Err(SimError::Config("GEV lower bound must be positive".into()));
        }
        if self.clamp_max < self.lower_bound() {
            return Err(SimError::Config("delay clamp below GEV lower bound".into()));
        }
        Ok(())
    }
}

/// A payload tagged with its creation and delivery times on the sim clock.
#[derive(Debug, Clone, Copy)]
pub struct TimestampedMessage<T> {
    pub payload: T,
    pub created_at: f64,
    pub deliver_at: f64,
}

/// Delivery record for the optional latency trace.
#[derive(Debug, Clone, Copy)]
pub struct LatencyRecord {
    pub created_at: f64,
    pub deliver_at: f64,
    pub dropped: bool,
}

/// One-way message channel with in-order delivery.
///
/// Messages become visible once the sim clock reaches `deliver_at`; a message
/// that arrives after a younger one has already been delivered is dropped.
#[derive(Debug)]
pub struct Channel<T> {
    pending: Vec<TimestampedMessage<T>>,
    last_delivered_created: f64,
    pub trace: Vec<LatencyRecord>,
    pub trace_enabled: bool,
}

impl<T> Default for Channel<T> {
    fn default() -> Self {
        Self {
            pending: Vec::new(),
            last_delivered_created: f64::NEG_INFINITY,
            trace: Vec::new(),
            trace_enabled: false,
        }
    }
}

impl<T> Channel<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, payload: T, now: f64, delay: f64) {
        debug_assert!(delay >= 0.0);
        self.pending.push(TimestampedMessage {
            payload,
            created_at: now,
            deliver_at: now + delay,
        });
    }

    /// Removes and returns all deliverable messages, oldest delivery first,
    /// dropping any that would violate in-order delivery.
    pub fn poll(&mut self, now: f64) -> Vec<TimestampedMessage<T>> {
        let mut due: Vec<TimestampedMessage<T>> = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].deliver_at <= now {
                due.push(self.pending.swap_remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by(|a, b| {
            a.deliver_at
                .partial_cmp(&b.deliver_at)
                .unwrap()
                .then(a.created_at.partial_cmp(&b.created_at).unwrap())
        });
        let mut out = Vec::with_capacity(due.len());
        for msg in due {
            let stale = msg.created_at <= self.last_delivered_created;
            if self.trace_enabled {
                self.trace.push(LatencyRecord {
                    created_at: msg.created_at,
                    deliver_at: msg.deliver_at,
                    dropped: stale,
                });
            }
            if stale {
                continue;
            }
            self.last_delivered_created = msg.created_at;
            out.push(msg);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Nominal block rates of the simulation, realized on a 1 ms grid.
#[derive(Debug, Clone, Copy)]
pub struct RateSchedule;

impl RateSchedule {
    pub const BASE_DT: f64 = 0.001;
    pub const PLANT_PERIOD_MS: u64 = 1;
    pub const SENSOR_PERIOD_MS: u64 = 10;
    pub const NMPC_PERIOD_MS: u64 = 20;
    /// 30 Hz on the millisecond grid: alternating 33/33/34 ms ticks.
    pub const OPERATOR_PATTERN_MS: [u64; 3] = [33, 33, 34];
}

enum Cadence {
    Periodic(u64),
    Cycle(&'static [u64], usize),
}

pub struct Task<Ctx> {
    name: &'static str,
    next_ms: u64,
    cadence: Cadence,
    f: Box<dyn FnMut(&mut Ctx, f64) -> Result<(), SimError>>,
}

/// Deterministic fixed-order scheduler over a 1 ms base step.
///
/// Tasks fire in registration order whenever the clock hits their next tick;
/// the registration order is the intra-tick execution order.
pub struct Scheduler<Ctx> {
    tasks: Vec<Task<Ctx>>,
    now_ms: u64,
}

impl<Ctx> Scheduler<Ctx> {
    pub fn new() -> Self {
        Self {
            tasks: Vec::new(),
            now_ms: 0,
        }
    }

    pub fn add_periodic(
        &mut self,
        name: &'static str,
        period_ms: u64,
        f: impl FnMut(&mut Ctx, f64) -> Result<(), SimError> + 'static,
    ) {
        assert!(period_ms >= 1);
        self.tasks.push(Task {
            name,
            next_ms: 0,
            cadence: Cadence::Periodic(period_ms),
            f: Box::new(f),
        });
    }

    pub fn add_cycle(
        &mut self,
        name: &'static str,
        pattern: &'static [u64],
        f: impl FnMut(&mut Ctx, f64) -> Result<(), SimError> + 'static,
    ) {
        assert!(!pattern.is_empty());
        self.tasks.push(Task {
            name,
            next_ms: 0,
            cadence: Cadence::Cycle(pattern, 0),
        f: Box::new(f),
        });
    }

    pub fn now(&self) -> f64 {
        self.now_ms as f64 * RateSchedule::BASE_DT
    }

    /// Advances the clock by one base step, firing due tasks first.
    pub fn step(&mut self, ctx: &mut Ctx) -> Result<(), SimError> {
        let t = self.now();
        for task in &mut self.tasks {
            if task.next_ms == self.now_ms {
                (task.f)(ctx, t).map_err(|e| SimError::TaskFailed {
                    task: task.name,
                    t,
                    source: Box::new(e),
                })?;
                match &mut task.cadence {
                    Cadence::Periodic(p) => task.next_ms += *p,
                    Cadence::Cycle(pattern, idx) => {
                        task.next_ms += pattern[*idx];
                        *idx = (*idx + 1) % pattern.len();
                    }
                }
            }
        }
        self.now_ms += 1;
        Ok(())
    }

    /// Runs for `duration` seconds (ticks at t = 0 .. duration, end exclusive).
    pub fn run(&mut self, ctx: &mut Ctx, duration: f64) -> Result<(), SimError> {
        let end_ms = (duration / RateSchedule::BASE_DT).round() as u64;
        while self.now_ms < end_ms {
            self.step(ctx)?;
        }
        Ok(())
    }

    /// Runs until `stop` returns true or `max_duration` elapses; reports
    /// whether the stop condition was reached.
    pub fn run_until(
        &mut self,
        ctx: &mut Ctx,
        max_duration: f64,
        mut stop: impl FnMut(&Ctx) -> bool,
    ) -> Result<bool, SimError> {
        let end_ms = (max_duration / RateSchedule::BASE_DT).round() as u64;
        while self.now_ms < end_ms {
            self.step(ctx)?;
            if stop(ctx) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
