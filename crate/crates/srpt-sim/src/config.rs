//! Key=value experiment configuration with overrides for the vehicle, the
//! controller, the delay model and the driver baseline.

use std::path::Path;

use crate::controller::NmpcConfig;
use crate::error::SimError;
use crate::link::DelayModel;
use crate::operator::{DriverConfig, LookaheadConfig};
use crate::vehicle::VehicleParams;

/// Everything a run can override from a config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub vehicle: VehicleParams,
    pub nmpc: NmpcConfig,
    pub delay: DelayModel,
    pub driver: DriverConfig,
    pub lookahead: LookaheadConfig,
    /// Speed cap, m/s (22 km/h).
    pub v_ref: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            nmpc: NmpcConfig::default(),
            delay: DelayModel::default(),
            driver: DriverConfig::default(),
            lookahead: LookaheadConfig::default(),
            v_ref: 6.11,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.vehicle.validate()?;
        self.nmpc.validate()?;
        self.delay.validate()?;
        if !(self.v_ref.is_finite() && self.v_ref > 0.0) {
            return Err(SimError::Config("v_ref must be positive".into()));
        }
        if !(self.driver.k1 > 0.0 && self.driver.k2 > 0.0) {
            return Err(SimError::Config("driver gains must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| SimError::Config(format!("bad numeric value `{value}` for `{key}`")))?;
        match key.trim() {
            "vehicle.m" => self.vehicle.m = v,
            "vehicle.iz" => self.vehicle.iz = v,
            "vehicle.m_f" => self.vehicle.m_f = v,
            "vehicle.m_r" => self.vehicle.m_r = v,
            "vehicle.l_f" => self.vehicle.l_f = v,
            "vehicle.l_r" => self.vehicle.l_r = v,
            "vehicle.c_sigma_f" => self.vehicle.c_sigma_f = v,
            "vehicle.c_sigma_r" => self.vehicle.c_sigma_r = v,
            "vehicle.lambda" => self.vehicle.lambda = v,
            "vehicle.gamma" => self.vehicle.gamma = v,
            "nmpc.horizon_seconds" => self.nmpc.horizon_seconds = v,
            "nmpc.steps" => self.nmpc.steps = v as usize,
            "nmpc.w_pos" => self.nmpc.w_pos = v,
            "nmpc.w_head" => self.nmpc.w_head = v,
            "nmpc.w_speed" => self.nmpc.w_speed = v,
            "nmpc.w_input_steer" => self.nmpc.w_input_steer = v,
            "nmpc.w_input_accel" => self.nmpc.w_input_accel = v,
            "nmpc.max_iterations" => self.nmpc.max_iterations = v as usize,
            "delay.xi" => self.delay.xi = v,
            "delay.mu_gev" => self.delay.mu_gev = v,
            "delay.sigma_gev" => self.delay.sigma_gev = v,
            "delay.clamp_max" => self.delay.clamp_max = v,
            "delay.uplink_delay" => self.delay.uplink_delay = v,
            "driver.k1" => self.driver.k1 = v,
            "driver.k2" => self.driver.k2 = v,
            "lookahead.delta_t_horizon" => self.lookahead.delta_t_horizon = v,
            "lookahead.tau_prior" => self.lookahead.tau_prior = v,
            "lookahead.l_f" => self.lookahead.l_f = v,
            "v_ref" => {
                self.v_ref = v;
                self.nmpc.v_ref = v;
            }
            other => return Err(SimError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file of `key=value` lines; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key, value)?;
        }
        cfg.nmpc.v_ref = cfg.nmpc.v_ref.min(cfg.v_ref);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn default_config_validates() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_overrides_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# experiment overrides").unwrap();
        writeln!(f, "v_ref = 5.0").unwrap();
        writeln!(f, "nmpc.w_head=3.0  # heavier heading cost").unwrap();
        writeln!(f, "driver.k1=0.2").unwrap();
        drop(f);
        let cfg = SimConfig::load(&path).unwrap();
        assert_eq!(cfg.v_ref, 5.0);
        assert_eq!(cfg.nmpc.v_ref, 5.0);
        assert_eq!(cfg.nmpc.w_head, 3.0);
        assert_eq!(cfg.driver.k1, 0.2);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        let mut cfg = SimConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("v_ref", "fast").is_err());
    }

    #[test]
    fn rejects_invalid_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "vehicle.gamma=2.0\n").unwrap();
        assert!(SimConfig::load(&path).is_err());
    }
}
