//! Single-track vehicle models: the linear-tire estimator/prediction model and
//! the saturating ground-truth plant.
//!
//! The estimator state ordering is fixed as
//! `[beta, yaw_rate, heading, fy_f, fy_r, vx, x, y, delta]`.

use crate::error::SimError;
use crate::geometry::{wrap_angle, Pose};

pub const STATE_DIM: usize = 9;

/// Steer-rate bound, +/-20 deg/s in SI.
pub const STEER_RATE_MAX: f64 = 20.0 * std::f64::consts::PI / 180.0;
/// Acceleration bounds in m/s^2.
pub const ACCEL_MIN: f64 = -3.0;
pub const ACCEL_MAX: f64 = 1.0;

const GRAVITY: f64 = 9.81;
/// Air density and lateral reference area for the crosswind force.
const AIR_DENSITY: f64 = 1.225;
const WIND_CY_A: f64 = 2.0;

/// Parameters of the single-track model, defaults for a FWD passenger car.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Vehicle mass, kg.
    pub m: f64,
    /// Yaw inertia, kg m^2.
    pub iz: f64,
    /// Front/rear axle mass shares, kg.
    pub m_f: f64,
    pub m_r: f64,
    /// CG-to-axle distances, m.
    pub l_f: f64,
    pub l_r: f64,
    /// Lumped axle cornering stiffnesses, N.
    pub c_sigma_f: f64,
    pub c_sigma_r: f64,
    /// Tire relaxation length, m.
    pub lambda: f64,
    /// Braking bias, fraction of braking force on the front axle.
    pub gamma: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 1681.0,
            iz: 2600.0,
            m_f: 871.6,
            m_r: 809.4,
            l_f: 1.3,
            l_r: 1.4,
            c_sigma_f: 1.057e5,
            c_sigma_r: 1.050e5,
            lambda: 0.3,
            gamma: 0.6,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.m,
            self.iz,
            self.l_f,
            self.l_r,
            self.c_sigma_f,
            self.c_sigma_r,
            self.lambda,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(SimError::Config("vehicle parameters must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SimError::Config("gamma must be in (0, 1]".into()));
        }
        if ((self.m_f + self.m_r - self.m) / self.m).abs() > 1e-6 {
            return Err(SimError::Config(format!(
                "axle mass shares {} + {} do not sum to m = {}",
                self.m_f, self.m_r, self.m
            )));
        }
        Ok(())
    }

    /// Static front/rear axle loads, N.
    pub fn fz_front(&self) -> f64 {
        self.m_f * GRAVITY
    }

    pub fn fz_rear(&self) -> f64 {
        self.m_r * GRAVITY
    }
}

/// The 9-element estimator state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    /// Sideslip angle, rad.
    pub beta: f64,
    /// Yaw rate, rad/s.
    pub yaw_rate: f64,
    /// Heading, rad, wrapped to (-pi, pi].
    pub heading: f64,
    /// Axle lateral forces, N.
    pub fy_f: f64,
    pub fy_r: f64,
    /// Longitudinal speed, m/s.
    pub vx: f64,
    /// CG position in the global frame, m.
    pub x: f64,
    pub y: f64,
    /// Equivalent front steer angle, rad.
    pub delta: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.beta, self.yaw_rate, self.heading, self.fy_f, self.fy_r, self.vx, self.x,
            self.y, self.delta,
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            beta: a[0],
            yaw_rate: a[1],
            heading: a[2],
            fy_f: a[3],
            fy_r: a[4],
            vx: a[5],
            x: a[6],
            y: a[7],
            delta: a[8],
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Bounded steer-rate / acceleration pair applied to the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    /// Steer rate, rad/s.
    pub steer_rate: f64,
    /// Longitudinal acceleration, m/s^2.
    pub accel: f64,
}

impl ControlCommand {
    pub fn clamped(&self) -> Self {
        Self {
            steer_rate: self.steer_rate.clamp(-STEER_RATE_MAX, STEER_RATE_MAX),
            accel: self.accel.clamp(ACCEL_MIN, ACCEL_MAX),
        }
    }

    pub fn within_bounds(&self, tol: f64) -> bool {
        self.steer_rate.abs() <= STEER_RATE_MAX + tol
            && self.accel >= ACCEL_MIN - tol
            && self.accel <= ACCEL_MAX + tol
    }
}

/// Road adhesion and lateral wind at the vehicle's current location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentSample {
    /// Adhesion coefficient, (0, 1].
    pub mu: f64,
    /// Lateral wind speed, m/s.
    pub wind_speed_lateral: f64,
}

impl Default for EnvironmentSample {
    fn default() -> Self {
        Self {
            mu: 1.0,
            wind_speed_lateral: 0.0,
        }
    }
}

/// Ground-truth plant state, kept strictly separate from the estimator state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub beta: f64,
    pub yaw_rate: f64,
    /// Lagged axle lateral forces, N.
    pub fy_f: f64,
    pub fy_r: f64,
    pub delta: f64,
}

impl PlantState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    /// The estimator-state view of the plant, used for truth logging and for
    /// the no-EKF mode.
    pub fn as_vehicle_state(&self) -> VehicleState {
        VehicleState {
            beta: self.beta,
            yaw_rate: self.yaw_rate,
            heading: self.heading,
            fy_f: self.fy_f,
            fy_r: self.fy_r,
            vx: self.vx,
            x: self.x,
            y: self.y,
            delta: self.delta,
        }
    }
}

/// Speed guard for terms with Vx in a denominator.
#[inline]
pub fn guarded_vx(vx: f64) -> f64 {
    vx.max(0.01)
}

/// Front-axle longitudinal force; braking is scaled by the bias gamma.
pub fn longitudinal_force(accel: f64, p: &VehicleParams) -> f64 {
    if accel >= 0.0 {
        p.m * accel
    } else {
        p.gamma * p.m * accel
    }
}

/// Front and rear tire slips.
pub fn tire_slips(x: &VehicleState, p: &VehicleParams) -> (f64, f64) {
    let vx = guarded_vx(x.vx);
    let sigma_f = x.delta.tan() - x.beta - x.yaw_rate * p.l_f / vx;
    let sigma_r = -x.beta + x.yaw_rate * p.l_r / vx;
    (sigma_f, sigma_r)
}

/// Time derivative of the estimator state.
pub fn state_derivative(
    x: &VehicleState,
    u: &ControlCommand,
    p: &VehicleParams,
) -> Result<[f64; STATE_DIM], SimError> {
    if !x.is_finite() || !u.steer_rate.is_finite() || !u.accel.is_finite() {
        return Err(SimError::NonFinite("state_derivative"));
    }
    let vx = guarded_vx(x.vx);
    let fx_f = longitudinal_force(u.accel, p);
    let (sigma_f, sigma_r) = tire_slips(x, p);
    let front_lat = x.fy_f * x.delta.cos() + fx_f * x.delta.sin();
    let (sin_psi, cos_psi) = x.heading.sin_cos();
    let tan_beta = x.beta.tan();
    Ok([
        (front_lat + x.fy_r) / (p.m * vx) - x.beta * u.accel / vx - x.yaw_rate,
        (front_lat * p.l_f - x.fy_r * p.l_r) / p.iz,
        x.yaw_rate,
        x.vx / p.lambda * (p.c_sigma_f * sigma_f - x.fy_f),
        x.vx / p.lambda * (p.c_sigma_r * sigma_r - x.fy_r),
        u.accel,
        x.vx * (cos_psi - sin_psi * tan_beta),
        x.vx * (sin_psi + cos_psi * tan_beta),
        u.steer_rate,
    ])
}

/// Explicit first-order step of the estimator model; heading wrapped.
pub fn integrate_estimator_model(
    x: &VehicleState,
    u: &ControlCommand,
    dt: f64,
    p: &VehicleParams,
) -> Result<VehicleState, SimError> {
    let mut next = integrate_unwrapped(x, u, dt, p)?;
    next.heading = wrap_angle(next.heading);
    Ok(next)
}

/// Same first-order step without the heading wrap. The EKF differentiates
/// this map, where a wrap would put a spurious jump into the Jacobian.
pub fn integrate_unwrapped(
    x: &VehicleState,
    u: &ControlCommand,
    dt: f64,
    p: &VehicleParams,
) -> Result<VehicleState, SimError> {
    let dx = state_derivative(x, u, p)?;
    let a = x.to_array();
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = a[i] + dx[i] * dt;
    }
    Ok(VehicleState::from_array(&out))
}

/// Lateral force of the crosswind at the CG, N.
pub fn wind_force(wind_speed_lateral: f64) -> f64 {
    0.5 * AIR_DENSITY * WIND_CY_A * wind_speed_lateral * wind_speed_lateral
}

/// Saturating axle lateral force target.
fn saturated_force(c_sigma: f64, sigma: f64, mu: f64, fz: f64) -> f64 {
    let cap = mu * fz;
    cap * (c_sigma * sigma / cap).tanh()
}

/// Lateral specific force at the CG of the plant (what an ideal IMU reads).
pub fn plant_lateral_accel(s: &PlantState, u: &ControlCommand, env: &EnvironmentSample, p: &VehicleParams) -> f64 {
    let u = u.clamped();
    let fx_f = longitudinal_force(u.accel, p);
    (s.fy_f * s.delta.cos() + fx_f * s.delta.sin() + s.fy_r + wind_force(env.wind_speed_lateral)) / p.m
}

/// One 1 ms step of the ground-truth plant.
///
/// Uses the single-track skeleton with a tanh-saturating tire characteristic
/// capped at mu * Fz per axle, a lateral wind force at the CG, and command
/// saturation to the actuator bounds.
pub fn plant_step(
    s: &PlantState,
    u: &ControlCommand,
    env: &EnvironmentSample,
    dt: f64,
    p: &VehicleParams,
) -> PlantState {
    let u = u.clamped();
    let vx = guarded_vx(s.vx);
    let fx_f = longitudinal_force(u.accel, p);
    let est_view = s.as_vehicle_state();
    let (sigma_f, sigma_r) = tire_slips(&est_view, p);
    let fy_f_target = saturated_force(p.c_sigma_f, sigma_f, env.mu, p.fz_front());
    let fy_r_target = saturated_force(p.c_sigma_r, sigma_r, env.mu, p.fz_rear());
    let f_wind = wind_force(env.wind_speed_lateral);

    let front_lat = s.fy_f * s.delta.cos() + fx_f * s.delta.sin();
    let beta_dot =
        (front_lat + s.fy_r + f_wind) / (p.m * vx) - s.beta * u.accel / vx - s.yaw_rate;
    let yaw_acc = (front_lat * p.l_f - s.fy_r * p.l_r) / p.iz;
    let (sin_psi, cos_psi) = s.heading.sin_cos();
    let tan_beta = s.beta.tan();

    PlantState {
        x: s.x + s.vx * (cos_psi - sin_psi * tan_beta) * dt,
        y: s.y + s.vx * (sin_psi + cos_psi * tan_beta) * dt,
        heading: wrap_angle(s.heading + s.yaw_rate * dt),
        vx: (s.vx + u.accel * dt).max(0.0),
        beta: s.beta + beta_dot * dt,
        yaw_rate: s.yaw_rate + yaw_acc * dt,
        fy_f: s.fy_f + s.vx / p.lambda * (fy_f_target - s.fy_f) * dt,
        fy_r: s.fy_r + s.vx / p.lambda * (fy_r_target - s.fy_r) * dt,
        delta: s.delta + u.steer_rate * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn default_params_validate() {
        VehicleParams::default().validate().unwrap();
    }

    #[test]
    fn bad_mass_split_rejected() {
        let p = VehicleParams {
            m_f: 900.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn derivative_zero_at_origin() {
        let d = state_derivative(
            &VehicleState::default(),
            &ControlCommand::default(),
            &VehicleParams::default(),
        )
        .unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn derivative_rear_force_row() {
        // beta = 0.01, Vx = 10: sigma_r = -0.01,
        // Fy_r_dot = (10 / 0.3) * (1.050e5 * (-0.01)) = -35000 N/s.
        let x = VehicleState {
            beta: 0.01,
            vx: 10.0,
            ..Default::default()
        };
        let d = state_derivative(&x, &ControlCommand::default(), &VehicleParams::default())
            .unwrap();
        assert_abs_diff_eq!(d[4], -35_000.0, epsilon = 1e-6);
    }

    #[test]
    fn derivative_kinematic_rows() {
        let x = VehicleState {
            vx: 6.11,
            ..Default::default()
        };
        let d = state_derivative(&x, &ControlCommand::default(), &VehicleParams::default())
            .unwrap();
        assert_abs_diff_eq!(d[6], 6.11, epsilon = 1e-12);
        assert_abs_diff_eq!(d[7], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_passthrough_rows() {
        let x = VehicleState {
            yaw_rate: 0.25,
            vx: 5.0,
            ..Default::default()
        };
        let u = ControlCommand {
            steer_rate: 0.1,
            accel: 0.5,
        };
        let d = state_derivative(&x, &u, &VehicleParams::default()).unwrap();
        assert_eq!(d[2], 0.25);
        assert_eq!(d[5], 0.5);
        assert_eq!(d[8], 0.1);
    }

    #[test]
    fn derivative_rejects_non_finite() {
        let x = VehicleState {
            beta: f64::NAN,
            ..Default::default()
        };
        assert!(
            state_derivative(&x, &ControlCommand::default(), &VehicleParams::default()).is_err()
        );
    }

    #[test]
    fn derivative_finite_at_standstill() {
        // Guard must keep the Vx denominators alive.
        let x = VehicleState {
            beta: 0.05,
            yaw_rate: 0.3,
            fy_f: 500.0,
            fy_r: -200.0,
            vx: 0.0,
            delta: 0.1,
            ..Default::default()
        };
        let u = ControlCommand {
            steer_rate: 0.0,
            accel: -1.0,
        };
        let d = state_derivative(&x, &u, &VehicleParams::default()).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn slips_zero_and_steer_only() {
        let p = VehicleParams::default();
        let (sf, sr) = tire_slips(&VehicleState::default(), &p);
        assert_eq!((sf, sr), (0.0, 0.0));

        let x = VehicleState {
            delta: 0.1,
            vx: 10.0,
            ..Default::default()
        };
        let (sf, _) = tire_slips(&x, &p);
        assert_abs_diff_eq!(sf, 0.1f64.tan(), epsilon = 1e-12);
    }

    #[test]
    fn slips_rear_with_yaw_rate() {
        let x = VehicleState {
            beta: 0.02,
            yaw_rate: 0.1,
            vx: 10.0,
            ..Default::default()
        };
        let (_, sr) = tire_slips(&x, &VehicleParams::default());
        assert_abs_diff_eq!(sr, -0.006, epsilon = 1e-12);
    }

    #[test]
    fn longitudinal_force_branches() {
        let p = VehicleParams::default();
        assert_eq!(longitudinal_force(0.0, &p), 0.0);
        assert_abs_diff_eq!(longitudinal_force(1.0, &p), 1681.0, epsilon = 1e-9);
        assert_abs_diff_eq!(longitudinal_force(-3.0, &p), -3025.8, epsilon = 1e-9);
    }

    #[test]
    fn integration_fixed_point_and_speed_row() {
        let p = VehicleParams::default();
        let x0 = VehicleState::default();
        let x1 = integrate_estimator_model(&x0, &ControlCommand::default(), 0.001, &p).unwrap();
        assert_eq!(x0, x1);

        let x = VehicleState {
            vx: 10.0,
            ..Default::default()
        };
        let u = ControlCommand {
            steer_rate: 0.0,
            accel: 1.0,
        };
        let x1 = integrate_estimator_model(&x, &u, 0.001, &p).unwrap();
        assert_abs_diff_eq!(x1.vx, 10.001, epsilon = 1e-12);
    }

    #[test]
    fn integration_wraps_heading() {
        let x = VehicleState {
            heading: PI - 1e-4,
            yaw_rate: 1.0,
            ..Default::default()
        };
        let x1 = integrate_estimator_model(
            &x,
            &ControlCommand::default(),
            0.001,
            &VehicleParams::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(x1.heading, -PI + 9e-4, epsilon = 1e-12);
    }

    #[test]
    fn richardson_halving_dt_quarters_local_error() {
        // Local truncation error of the Euler step is O(dt^2).
        let p = VehicleParams::default();
        let x = VehicleState {
            beta: 0.02,
            yaw_rate: 0.1,
            fy_f: 800.0,
            fy_r: 400.0,
            vx: 8.0,
            delta: 0.05,
            ..Default::default()
        };
        let u = ControlCommand {
            steer_rate: 0.1,
            accel: 0.5,
        };
        let fine = |dt: f64, n: usize| {
            let mut s = x;
            for _ in 0..n {
                s = integrate_estimator_model(&s, &u, dt, &p).unwrap();
            }
            s
        };
        let err = |a: &VehicleState, b: &VehicleState| {
            a.to_array()
                .iter()
                .zip(b.to_array())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0f64, f64::max)
        };
        // One Euler step of size dt has local error ~C dt^2; compare single
        // steps at 2 ms and 1 ms against near-exact endpoints.
        let e_2ms = err(&fine(2e-3, 1), &fine(1e-6, 2000));
        let e_1ms = err(&fine(1e-3, 1), &fine(1e-6, 1000));
        let ratio = e_2ms / e_1ms;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn wind_force_at_80_kmh() {
        assert_abs_diff_eq!(wind_force(22.22), 604.86, epsilon = 0.05);
    }

    #[test]
    fn plant_matches_linear_model_at_small_slip() {
        let p = VehicleParams::default();
        let sigma = 2e-4; // C*sigma = ~21 N, far below mu*Fz
        let lin = p.c_sigma_f * sigma;
        let sat = super::saturated_force(p.c_sigma_f, sigma, 1.0, p.fz_front());
        assert!((sat - lin).abs() / lin < 0.01);
    }

    #[test]
    fn plant_force_capped_by_adhesion() {
        let p = VehicleParams::default();
        let mu = 0.33;
        for sigma in [-1.0, -0.1, 0.1, 0.5, 2.0] {
            let f = super::saturated_force(p.c_sigma_f, sigma, mu, p.fz_front());
            assert!(f.abs() <= mu * p.fz_front() + 1e-9);
        }
    }

    #[test]
    fn plant_and_estimator_agree_at_high_adhesion() {
        // mu = 1, no wind, gentle steady steer: 1 s rollouts stay together.
        let p = VehicleParams::default();
        let u = ControlCommand {
            steer_rate: 0.0,
            accel: 0.0,
        };
        let env = EnvironmentSample::default();
        let mut plant = PlantState {
            vx: 6.11,
            delta: 0.01,
            ..Default::default()
        };
        let mut est = plant.as_vehicle_state();
        for _ in 0..1000 {
            plant = plant_step(&plant, &u, &env, 0.001, &p);
            est = integrate_estimator_model(&est, &u, 0.001, &p).unwrap();
        }
        let dp = ((plant.x - est.x).powi(2) + (plant.y - est.y).powi(2)).sqrt();
        assert!(dp < 0.05, "position divergence {dp}");
    }

    #[test]
    fn plant_step_saturates_commands() {
        let p = VehicleParams::default();
        let env = EnvironmentSample::default();
        let s = PlantState {
            vx: 5.0,
            ..Default::default()
        };
        let wild = ControlCommand {
            steer_rate: 10.0,
            accel: 50.0,
        };
        let next = plant_step(&s, &wild, &env, 0.001, &p);
        assert_abs_diff_eq!(next.delta, STEER_RATE_MAX * 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(next.vx, 5.0 + ACCEL_MAX * 0.001, epsilon = 1e-15);
    }
}
