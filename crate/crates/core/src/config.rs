//! TOML scenario configuration.
//!
//! Every section is optional and falls back to the reference formation run.
//! Units: lengths in m, times in s, angles in rad, rates in 1/s.
//!
//! ```toml
//! scenario = "ramp_reject"   # track | ramp_reject | sweep
//! seed = 1
//!
//! [formation]
//! circles = 10
//! radius_step = 2.0          # m
//! hand_offset = 0.1          # m
//! initial_noise = 0.0        # m, default 0.1 for track and 0 otherwise
//! initial_heading = 0.0      # rad
//!
//! [gains]
//! k0 = 1.4342
//! k1 = 1.536
//! k2 = 0.4937
//! k0_tau = 0.321
//! k1_tau = 0.436
//! k2_tau = 0.213
//! k_psi = 0.1
//!
//! [delay]
//! tau = 0.33                 # s
//! tau_max = 0.33             # s, defaults to tau
//!
//! [leader]
//! speed = 0.3                # m/s
//! heading_amplitude = 0.6    # rad
//! heading_period = 40.0      # s
//!
//! [simulation]
//! horizon = 60.0             # s
//! dt = 0.001                 # s
//! record_every = 100         # steps
//!
//! [disturbance]
//! enabled = true             # default false for track
//! target = 0                 # robot index
//! d0 = [0.07, 0.06]          # m/s
//! d1 = [0.02, -0.04]         # m/s^2
//! residual_amplitude = [0.05, 0.06]
//! residual_rate = 0.3        # 1/s
//! residual_omega = 1.0       # rad/s
//!
//! [certificate]
//! p = "2"                    # "1" | "2" | "inf"
//! alpha = [-0.6, -1.55]      # omit to search
//! route = "analytic"         # analytic | sampled
//! samples = 200
//! sample_radius = 0.5        # m
//!
//! [output]
//! dir = "out"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::certificate::RouteKind;
use crate::error::{Error, Result};
use crate::formation::{DisturbanceSpec, ExperimentKind, FormationSpec, GainSet, MeanderLeader, Scenario};
use crate::norms::PNorm;

/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "SCALENET_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub formation: FormationSection,
    #[serde(default)]
    pub gains: GainSet,
    #[serde(default)]
    pub delay: DelaySection,
    #[serde(default)]
    pub leader: LeaderSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub certificate: CertificateSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationSection {
    pub circles: usize,
    pub radius_step: f64,
    pub hand_offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_noise: Option<f64>,
    pub initial_heading: f64,
}

impl Default for FormationSection {
    fn default() -> Self {
        FormationSection {
            circles: 10,
            radius_step: 2.0,
            hand_offset: 0.1,
            initial_noise: None,
            initial_heading: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySection {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
}

impl Default for DelaySection {
    fn default() -> Self {
        DelaySection {
            tau: 0.33,
            tau_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderSection {
    pub speed: f64,
    pub heading_amplitude: f64,
    pub heading_period: f64,
}

impl Default for LeaderSection {
    fn default() -> Self {
        LeaderSection {
            speed: 0.3,
            heading_amplitude: 0.6,
            heading_period: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            horizon: 60.0,
            dt: 1e-3,
            record_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    pub target: usize,
    pub d0: [f64; 2],
    pub d1: [f64; 2],
    pub residual_amplitude: [f64; 2],
    pub residual_rate: f64,
    pub residual_omega: f64,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        let d = DisturbanceSpec::reference();
        DisturbanceSection {
            enabled: None,
            target: 0,
            d0: d.d0,
            d1: d.d1,
            residual_amplitude: d.residual_amplitude,
            residual_rate: d.residual_rate,
            residual_omega: d.residual_omega,
        }
    }
}

impl DisturbanceSection {
    pub fn spec(&self) -> DisturbanceSpec {
        DisturbanceSpec {
            d0: self.d0,
            d1: self.d1,
            residual_amplitude: self.residual_amplitude,
            residual_rate: self.residual_rate,
            residual_omega: self.residual_omega,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSection {
    pub p: PNorm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 2]>,
    pub route: RouteKind,
    pub samples: usize,
    pub sample_radius: f64,
}

impl Default for CertificateSection {
    fn default() -> Self {
        CertificateSection {
            p: PNorm::Two,
            alpha: None,
            route: RouteKind::Analytic,
            samples: 200,
            sample_radius: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// Parses and validates a configuration. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<document>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

impl ScenarioConfig {
    pub fn new(scenario: ExperimentKind) -> Self {
        ScenarioConfig {
            scenario,
            seed: default_seed(),
            formation: FormationSection::default(),
            gains: GainSet::default(),
            delay: DelaySection::default(),
            leader: LeaderSection::default(),
            simulation: SimulationSection::default(),
            disturbance: DisturbanceSection::default(),
            certificate: CertificateSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn tau_max(&self) -> f64 {
        self.delay.tau_max.unwrap_or(self.delay.tau)
    }

    pub fn initial_noise(&self) -> f64 {
        self.formation.initial_noise.unwrap_or(match self.scenario {
            ExperimentKind::Track => 0.1,
            _ => 0.0,
        })
    }

    pub fn disturbance_enabled(&self) -> bool {
        self.disturbance.enabled.unwrap_or(self.scenario != ExperimentKind::Track)
    }

    /// Output directory, honoring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output.dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.formation;
        FormationSpec::new(f.circles, f.radius_step)?;
        positive("formation.hand_offset", f.hand_offset)?;
        if let Some(a) = f.initial_noise {
            nonnegative("formation.initial_noise", a)?;
        }
        finite("formation.initial_heading", f.initial_heading)?;
        self.gains.validate()?;

        nonnegative("delay.tau", self.delay.tau)?;
        if let Some(m) = self.delay.tau_max {
            nonnegative("delay.tau_max", m)?;
            if m < self.delay.tau {
                return Err(Error::config(
                    "delay.tau_max",
                    format!("tau_max = {m} is below tau = {}", self.delay.tau),
                ));
            }
        }
        MeanderLeader::new(self.leader.speed, self.leader.heading_amplitude, self.leader.heading_period)?;

        let s = &self.simulation;
        positive("simulation.horizon", s.horizon)?;
        positive("simulation.dt", s.dt)?;
        if s.record_every == 0 {
            return Err(Error::config("simulation.record_every", "must be at least 1"));
        }
        let steps = s.horizon / s.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::config(
                "simulation.dt",
                format!("horizon {} is not a whole number of steps of {}", s.horizon, s.dt),
            ));
        }
        let delayed = self.gains.delayed().iter().any(|&g| g != 0.0) && self.gains.k_psi != 0.0;
        if delayed && self.delay.tau > 0.0 && s.dt > self.delay.tau {
            return Err(Error::config(
                "simulation.dt",
                format!(
                    "dt <= tau is required for delayed couplings: dt = {}, tau = {}",
                    s.dt, self.delay.tau
                ),
            ));
        }

        let count = 2 * f.circles * (f.circles + 1);
        if self.disturbance_enabled() && self.disturbance.target >= count {
            return Err(Error::config(
                "disturbance.target",
                format!("robot {} does not exist in a formation of {count}", self.disturbance.target),
            ));
        }
        self.disturbance.spec().validate()?;

        let c = &self.certificate;
        if let Some([a1, a2]) = c.alpha {
            finite("certificate.alpha", a1)?;
            finite("certificate.alpha", a2)?;
        }
        if c.samples == 0 {
            return Err(Error::config("certificate.samples", "must be at least 1"));
        }
        nonnegative("certificate.sample_radius", c.sample_radius)?;
        Ok(())
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let f = &self.formation;
        Ok(Scenario {
            kind: self.scenario,
            seed: self.seed,
            formation: FormationSpec::new(f.circles, f.radius_step)?,
            hand_offset: f.hand_offset,
            initial_noise: self.initial_noise(),
            initial_heading: f.initial_heading,
            gains: self.gains,
            tau: self.delay.tau,
            tau_max: self.tau_max(),
            leader: MeanderLeader::new(self.leader.speed, self.leader.heading_amplitude, self.leader.heading_period)?,
            horizon: self.simulation.horizon,
            dt: self.simulation.dt,
            record_every: self.simulation.record_every,
            disturbance: self.disturbance.spec(),
            disturbance_target: self.disturbance_enabled().then_some(self.disturbance.target),
            p: self.certificate.p,
            alpha: self.certificate.alpha.map(|[a, b]| (a, b)),
            route: self.certificate.route,
            samples: self.certificate.samples,
            sample_radius: self.certificate.sample_radius,
        })
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be >= 0, got {v}")))
    }
}
