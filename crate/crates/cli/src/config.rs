use std::path::{Path, PathBuf};

use gvstab::specfun::QuadratureSpec;
use gvstab::stability_analysis::{CalibrationTarget, ControlConfig, Modes, WirelessConfig};
use gvstab::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything one run needs. Missing sections take their defaults; unknown
/// keys are an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where results go when `--out` is not given. Not part of the hash.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub modes: Modes,
    pub wireless: WirelessConfig,
    pub control: ControlConfig,
    pub quadrature: QuadratureSpec,
    pub instability_sweep: InstabilitySweep,
    pub rate_sweep: RateSweep,
    pub admission_sweep: AdmissionSweep,
    pub simulation: SimulationConfig,
    pub calibration: CalibrationTarget,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: None,
            modes: Modes::default(),
            wireless: WirelessConfig::default(),
            control: ControlConfig::default(),
            quadrature: QuadratureSpec::default(),
            instability_sweep: InstabilitySweep::default(),
            rate_sweep: RateSweep::default(),
            admission_sweep: AdmissionSweep::default(),
            simulation: SimulationConfig::default(),
            calibration: CalibrationTarget::default(),
        }
    }
}

/// P_us against the coding rate, one curve per velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstabilitySweep {
    /// bpcu
    pub rates: Vec<f64>,
    /// m/s
    pub velocities: Vec<f64>,
    /// s
    pub sampling_time: f64,
}

impl Default for InstabilitySweep {
    fn default() -> Self {
        Self {
            rates: (1..=28).map(|k| k as f64 / 28.0).collect(),
            velocities: default_velocities(),
            sampling_time: 1e-3,
        }
    }
}

/// Admissible rate against velocity, one curve per sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSweep {
    pub velocities: Vec<f64>,
    pub sampling_times: Vec<f64>,
    pub p_th: f64,
}

impl Default for RateSweep {
    fn default() -> Self {
        Self {
            velocities: default_velocities(),
            sampling_times: default_sampling_times(),
            p_th: 1e-9,
        }
    }
}

/// Fleet size against the instability threshold, one curve per sampling
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissionSweep {
    pub log10_p_th: Vec<f64>,
    pub sampling_times: Vec<f64>,
    pub velocity: f64,
}

impl Default for AdmissionSweep {
    fn default() -> Self {
        Self {
            log10_p_th: (-12..=-6).map(f64::from).collect(),
            sampling_times: default_sampling_times(),
            velocity: 5.0,
        }
    }
}

/// Closed-loop run with losses drawn from a correlated fading path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub velocity: f64,
    pub sampling_time: f64,
    /// Resource elements per packet.
    pub n_rb: u64,
    pub laps: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            velocity: 2.0,
            sampling_time: 1e-3,
            n_rb: 2450,
            laps: 20,
        }
    }
}

fn default_velocities() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0]
}

fn default_sampling_times() -> Vec<f64> {
    vec![1e-3, 2e-3, 3e-3, 4e-3, 5e-3]
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has a non-finite value")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} is not strictly increasing")));
    }
    Ok(())
}

fn check_positive(name: &str, grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.wireless.validate()?;
        self.control.validate(&self.wireless)?;
        self.quadrature.validate()?;

        let s = &self.instability_sweep;
        check_grid("instability_sweep.rates", &s.rates)?;
        check_positive("instability_sweep.rates", &s.rates)?;
        if self.modes.rate_units != gvstab::fbl::RateUnits::Bits && s.rates.iter().any(|&r| r > 1.0)
        {
            return Err(Error::Config(
                "instability_sweep.rates above 1 need rate_units = \"bits\"".into(),
            ));
        }
        check_grid("instability_sweep.velocities", &s.velocities)?;
        self.with_timing(s.velocities[0], s.sampling_time)?;

        let s = &self.rate_sweep;
        check_grid("rate_sweep.velocities", &s.velocities)?;
        check_grid("rate_sweep.sampling_times", &s.sampling_times)?;
        check_threshold("rate_sweep.p_th", s.p_th)?;
        for &ts in &s.sampling_times {
            self.with_timing(s.velocities[0], ts)?;
        }

        let s = &self.admission_sweep;
        check_grid("admission_sweep.log10_p_th", &s.log10_p_th)?;
        if s.log10_p_th.iter().any(|&l| l > 0.0) {
            return Err(Error::Config(
                "admission_sweep.log10_p_th must be <= 0".into(),
            ));
        }
        check_grid("admission_sweep.sampling_times", &s.sampling_times)?;
        for &ts in &s.sampling_times {
            self.with_timing(s.velocity, ts)?;
        }

        let s = &self.simulation;
        self.with_timing(s.velocity, s.sampling_time)?;
        if s.n_rb == 0 || s.laps == 0 {
            return Err(Error::Config(
                "simulation.n_rb and simulation.laps must be positive".into(),
            ));
        }

        let c = &self.calibration;
        check_threshold("calibration.p_th", c.p_th)?;
        self.with_timing(c.velocity, c.sampling_time)?;
        Ok(())
    }

    /// The control section with velocity and sampling time replaced,
    /// checked against the wireless timing.
    pub fn with_timing(&self, velocity: f64, sampling_time: f64) -> Result<ControlConfig> {
        if !(velocity.is_finite() && velocity >= 0.0) {
            return Err(Error::Config(format!("velocity {velocity} must be >= 0")));
        }
        let control = ControlConfig {
            velocity,
            sampling_time,
            ..self.control
        };
        control.ttis_per_sample(&self.wireless)?;
        Ok(control)
    }
}

fn check_threshold(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("{name} = {p} outside (0, 1]")));
    }
    Ok(())
}
