//! Virtual IMU, speed encoder and steer encoder with the configurable noise
//! sets used in the experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::SimError;
use crate::estimation::{MeasurementCovariance, MeasurementVector};
use crate::vehicle::{plant_lateral_accel, ControlCommand, EnvironmentSample, PlantState, VehicleParams};

/// Gravity constant used by the tilted-IMU transform.
const TILT_GRAVITY: f64 = 9.8;
const SPEED_GAIN: f64 = 1.05;
const STEER_BIAS_DEG: f64 = 0.5;
const STIFFNESS_FACTOR: f64 = 1.2;

/// Experiment noise sets. Set I bypasses sensing and the EKF entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseSetId {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
}

impl NoiseSetId {
    pub const ALL: [NoiseSetId; 6] = [
        NoiseSetId::I,
        NoiseSetId::Ii,
        NoiseSetId::Iii,
        NoiseSetId::Iv,
        NoiseSetId::V,
        NoiseSetId::Vi,
    ];

    /// Sets using the EKF (everything but set I).
    pub const EKF_SETS: [NoiseSetId; 5] = [
        NoiseSetId::Ii,
        NoiseSetId::Iii,
        NoiseSetId::Iv,
        NoiseSetId::V,
        NoiseSetId::Vi,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseSetId::I => "i",
            NoiseSetId::Ii => "ii",
            NoiseSetId::Iii => "iii",
            NoiseSetId::Iv => "iv",
            NoiseSetId::V => "v",
            NoiseSetId::Vi => "vi",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            NoiseSetId::I => 0,
            NoiseSetId::Ii => 1,
            NoiseSetId::Iii => 2,
            NoiseSetId::Iv => 3,
            NoiseSetId::V => 4,
            NoiseSetId::Vi => 5,
        }
    }
}

impl std::str::FromStr for NoiseSetId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(NoiseSetId::I),
            "ii" | "2" => Ok(NoiseSetId::Ii),
            "iii" | "3" => Ok(NoiseSetId::Iii),
            "iv" | "4" => Ok(NoiseSetId::Iv),
            "v" | "5" => Ok(NoiseSetId::V),
            "vi" | "6" => Ok(NoiseSetId::Vi),
            other => Err(SimError::Config(format!("unknown noise set `{other}`"))),
        }
    }
}

/// Which noise sources a set enables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSetConfig {
    pub set: NoiseSetId,
    pub gaussian_on: bool,
    pub gain_v: f64,
    pub bias_delta: f64,
    pub imu_tilt_deg: f64,
    pub stiffness_overestimate: bool,
}

impl NoiseSetConfig {
    pub fn for_set(set: NoiseSetId) -> Self {
        let bias = STEER_BIAS_DEG.to_radians();
        match set {
            NoiseSetId::I => Self {
                set,
                gaussian_on: false,
                gain_v: 1.0,
                bias_delta: 0.0,
                imu_tilt_deg: 0.0,
                stiffness_overestimate: false,
            },
            NoiseSetId::Ii => Self {
                set,
                gaussian_on: true,
                gain_v: 1.0,
                bias_delta: 0.0,
                imu_tilt_deg: 0.0,
                stiffness_overestimate: false,
            },
            NoiseSetId::Iii => Self {
                set,
                gaussian_on: true,
                gain_v: SPEED_GAIN,
                bias_delta: bias,
                imu_tilt_deg: 3.0,
                stiffness_overestimate: false,
            },
            NoiseSetId::Iv => Self {
                set,
                gaussian_on: true,
                gain_v: SPEED_GAIN,
                bias_delta: bias,
                imu_tilt_deg: 3.0,
                stiffness_overestimate: true,
            },
            NoiseSetId::V => Self {
                set,
                gaussian_on: true,
                gain_v: SPEED_GAIN,
                bias_delta: bias,
                imu_tilt_deg: 6.0,
                stiffness_overestimate: false,
            },
            NoiseSetId::Vi => Self {
                set,
                gaussian_on: true,
                gain_v: SPEED_GAIN,
                bias_delta: bias,
                imu_tilt_deg: 6.0,
                stiffness_overestimate: true,
            },
        }
    }

    /// Set I feeds true states straight into the loop.
    pub fn ekf_enabled(&self) -> bool {
        self.set != NoiseSetId::I
    }
}

/// The vehicle parameters the EKF should use under a noise set: sets iv and
/// vi overestimate both cornering stiffnesses by 20 %.
pub fn estimator_params_for(set: NoiseSetId, p: &VehicleParams) -> VehicleParams {
    if NoiseSetConfig::for_set(set).stiffness_overestimate {
        VehicleParams {
            c_sigma_f: p.c_sigma_f * STIFFNESS_FACTOR,
            c_sigma_r: p.c_sigma_r * STIFFNESS_FACTOR,
            ..*p
        }
    } else {
        *p
    }
}

/// 100 Hz sensor channel with its own seeded generator.
pub struct SensorRig {
    pub cfg: NoiseSetConfig,
    pub r: MeasurementCovariance,
    rng: ChaCha8Rng,
}

impl SensorRig {
    pub fn new(set: NoiseSetId, seed: u64) -> Self {
        Self {
            cfg: NoiseSetConfig::for_set(set),
            r: MeasurementCovariance::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Noise-free measurement of the plant truth.
    pub fn ideal(
        truth: &PlantState,
        u: &ControlCommand,
        env: &EnvironmentSample,
        p: &VehicleParams,
    ) -> MeasurementVector {
        MeasurementVector {
            ay: plant_lateral_accel(truth, u, env, p),
            yaw_rate: truth.yaw_rate,
            vx: truth.vx,
            delta: truth.delta,
        }
    }

    /// One 100 Hz sample: tilt transform, speed gain, steer bias, then
    /// additive Gaussian noise. Set I passes the truth through untouched.
    pub fn sense(
        &mut self,
        truth: &PlantState,
        u: &ControlCommand,
        env: &EnvironmentSample,
        p: &VehicleParams,
    ) -> MeasurementVector {
        let mut z = Self::ideal(truth, u, env, p);
        if self.cfg.set == NoiseSetId::I {
            return z;
        }
        if self.cfg.imu_tilt_deg > 0.0 {
            let (sin_t, cos_t) = self.cfg.imu_tilt_deg.to_radians().sin_cos();
            z.ay = z.ay * cos_t - TILT_GRAVITY * sin_t;
            z.yaw_rate *= cos_t;
        }
        z.vx *= self.cfg.gain_v;
        z.delta += self.cfg.bias_delta;
        if self.cfg.gaussian_on {
            let stds = self.r.stds();
            let mut noise = [0.0; 4];
            for (n, std) in noise.iter_mut().zip(stds) {
                *n = Normal::new(0.0, std).unwrap().sample(&mut self.rng);
            }
            z.ay += noise[0];
            z.yaw_rate += noise[1];
            z.vx += noise[2];
            z.delta += noise[3];
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn truth() -> PlantState {
        PlantState {
            vx: 6.11,
            yaw_rate: 0.1,
            delta: 0.02,
            fy_f: 400.0,
            fy_r: 300.0,
            ..Default::default()
        }
    }

    #[test]
    fn set_i_is_exact_passthrough() {
        let p = VehicleParams::default();
        let env = EnvironmentSample::default();
        let u = ControlCommand::default();
        let mut rig = SensorRig::new(NoiseSetId::I, 1);
        let z = rig.sense(&truth(), &u, &env, &p);
        let ideal = SensorRig::ideal(&truth(), &u, &env, &p);
        assert_eq!(z, ideal);
    }

    #[test]
    fn tilt_transform_values() {
        // ay = 0 with 3 deg tilt: -9.8 sin(3 deg).
        let mut rig = SensorRig::new(NoiseSetId::Iii, 1);
        rig.cfg.gaussian_on = false;
        rig.cfg.gain_v = 1.0;
        rig.cfg.bias_delta = 0.0;
        let p = VehicleParams::default();
        let z = rig.sense(
            &PlantState::default(),
            &ControlCommand::default(),
            &EnvironmentSample::default(),
            &p,
        );
        assert_abs_diff_eq!(z.ay, -9.8 * 3f64.to_radians().sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(z.ay, -0.5129, epsilon = 1e-4);
    }

    #[test]
    fn tilt_six_degrees_with_lateral_accel() {
        // ay = 2 with 6 deg tilt: 2 cos 6 - 9.8 sin 6.
        let mut rig = SensorRig::new(NoiseSetId::V, 1);
        rig.cfg.gaussian_on = false;
        rig.cfg.gain_v = 1.0;
        rig.cfg.bias_delta = 0.0;
        let p = VehicleParams::default();
        // fy_r chosen so the ideal ay is exactly 2 m/s^2.
        let s = PlantState {
            fy_r: 2.0 * p.m,
            ..Default::default()
        };
        let z = rig.sense(&s, &ControlCommand::default(), &EnvironmentSample::default(), &p);
        let (sin6, cos6) = 6f64.to_radians().sin_cos();
        assert_abs_diff_eq!(z.ay, 2.0 * cos6 - 9.8 * sin6, epsilon = 1e-12);
        assert_abs_diff_eq!(z.ay, 0.9647, epsilon = 1e-4);
    }

    #[test]
    fn deterministic_transforms_without_gaussian() {
        let mut rig = SensorRig::new(NoiseSetId::Iii, 1);
        rig.cfg.gaussian_on = false;
        let p = VehicleParams::default();
        let env = EnvironmentSample::default();
        let u = ControlCommand::default();
        let t = truth();
        let z = rig.sense(&t, &u, &env, &p);
        let ideal = SensorRig::ideal(&t, &u, &env, &p);
        let (sin3, cos3) = 3f64.to_radians().sin_cos();
        assert_abs_diff_eq!(z.ay, ideal.ay * cos3 - 9.8 * sin3, epsilon = 1e-12);
        assert_abs_diff_eq!(z.yaw_rate, 0.1 * cos3, epsilon = 1e-12);
        assert_abs_diff_eq!(z.vx, 6.11 * 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(z.delta, 0.02 + 0.5f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn reproducible_with_fixed_seed() {
        let p = VehicleParams::default();
        let env = EnvironmentSample::default();
        let u = ControlCommand::default();
        let sample = |seed| {
            let mut rig = SensorRig::new(NoiseSetId::Ii, seed);
            (0..50)
                .map(|_| rig.sense(&truth(), &u, &env, &p))
                .collect::<Vec<_>>()
        };
        assert_eq!(sample(9), sample(9));
    }

    #[test]
    fn gaussian_calibration_quick() {
        let p = VehicleParams::default();
        let env = EnvironmentSample::default();
        let u = ControlCommand::default();
        let t = PlantState::default();
        let mut rig = SensorRig::new(NoiseSetId::Ii, 42);
        let n = 50_000;
        let mut sum = [0.0f64; 4];
        let mut sumsq = [0.0f64; 4];
        for _ in 0..n {
            let z = rig.sense(&t, &u, &env, &p);
            for (i, v) in z.to_array().iter().enumerate() {
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        let stds = MeasurementCovariance::default().stds();
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let rel = (var.sqrt() - stds[i]).abs() / stds[i];
            assert!(rel < 0.03, "channel {i}: rel err {rel}");
        }
    }

    #[test]
    fn stiffness_overestimate_only_for_iv_and_vi() {
        let p = VehicleParams::default();
        let same = estimator_params_for(NoiseSetId::Iii, &p);
        assert_eq!(same, p);
        let over = estimator_params_for(NoiseSetId::Iv, &p);
        assert_abs_diff_eq!(over.c_sigma_f, 1.2684e5, epsilon = 1e-6);
        let over = estimator_params_for(NoiseSetId::Vi, &p);
        assert_abs_diff_eq!(over.c_sigma_r, 1.2 * 1.050e5, epsilon = 1e-6);
        assert_eq!(NoiseSetConfig::for_set(NoiseSetId::Vi).imu_tilt_deg, 6.0);
    }
}
