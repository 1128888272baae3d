//! Experiment configuration files.
//!
//! One TOML file describes one run: the model parameters, the integrator,
//! the section for the invoked subcommand and a master seed. Unknown keys
//! are rejected so configs stay diff-able and archivable; every run echoes
//! the fully resolved configuration into a manifest next to its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asymptotics::Branch;
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::perturbations::DistSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymptotics: Option<AsymptoticsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basin: Option<BasinSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duffing: Option<DuffingSection>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Configuration(format!("invalid config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Configuration(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<crate::dynamics::ModelParams> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Configuration("missing [model] section".into()))?;
        crate::dynamics::ModelParams::new(m.lambda, m.delta, m.f)
    }

    pub fn integrator(&self) -> IntegratorConfig {
        self.integrator.unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub delta: f64,
    pub f: f64,
}

fn default_series_order() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub r0: f64,
    pub psi0: f64,
    pub tau0: f64,
    pub tau_end: f64,
    #[serde(default = "default_series_order")]
    pub series_order: usize,
    /// Escape threshold for the weighted deviation norm; omitted means no
    /// escape detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSection {
    /// Deterministic triple `xi = 1, eta = 1, zeta = tau` of strength `mu`.
    Example1 { mu: f64 },
    JumpTrain { n: usize, jump_dist: DistSpec, mu: f64 },
    SingleJump { omega_dist: DistSpec, jump_dist: DistSpec, mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsSection {
    pub branch: Branch,
    pub order: usize,
    #[serde(default = "TauGrid::default_grid")]
    pub tau_grid: TauGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl TauGrid {
    fn default_grid() -> Self {
        Self { start: 1e2, stop: 1e4, points: 9 }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.start > 0.0 && self.stop > self.start && self.points >= 2) {
            return Err(Error::Configuration(format!("invalid tau grid {self:?}")));
        }
        let log_ratio = (self.stop / self.start).ln();
        Ok((0..self.points)
            .map(|i| self.start * (log_ratio * i as f64 / (self.points - 1) as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "default_series_order")]
    pub series_order: usize,
    #[serde(default = "CertifySection::default_rho_max")]
    pub rho_max: f64,
    #[serde(default = "CertifySection::default_tau_min")]
    pub tau_min: f64,
    #[serde(default = "CertifySection::default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "CertifySection::default_angles")]
    pub angles: usize,
    #[serde(default = "CertifySection::default_radii")]
    pub radii: usize,
    #[serde(default = "CertifySection::default_taus")]
    pub taus: usize,
}

impl CertifySection {
    fn default_rho_max() -> f64 {
        0.4
    }
    fn default_tau_min() -> f64 {
        50.0
    }
    fn default_tau_max() -> f64 {
        1e4
    }
    fn default_angles() -> usize {
        64
    }
    fn default_radii() -> usize {
        64
    }
    fn default_taus() -> usize {
        32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinSection {
    pub r_min: f64,
    pub r_max: f64,
    pub r_steps: usize,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_steps: usize,
    #[serde(default = "BasinSection::default_tau_init")]
    pub tau_init: f64,
    #[serde(default = "BasinSection::default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "BasinSection::default_ratio_lo")]
    pub ratio_lo: f64,
    #[serde(default = "BasinSection::default_ratio_hi")]
    pub ratio_hi: f64,
    #[serde(default = "BasinSection::default_phase_window")]
    pub phase_window: f64,
}

impl BasinSection {
    fn default_tau_init() -> f64 {
        0.01
    }
    fn default_tau_max() -> f64 {
        100.0
    }
    fn default_ratio_lo() -> f64 {
        0.8
    }
    fn default_ratio_hi() -> f64 {
        1.2
    }
    fn default_phase_window() -> f64 {
        std::f64::consts::FRAC_PI_2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_trials: usize,
    pub mu: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub tau0: f64,
    #[serde(default = "default_series_order")]
    pub series_order: usize,
    pub perturbation: PerturbationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingSection {
    pub beta: f64,
    pub gamma: f64,
    pub eps: f64,
    pub alpha: f64,
    pub x0: f64,
    pub v0: f64,
    pub t_end: f64,
}

/// Manifest written next to every output; echoes the resolved config
/// (seed override applied) so the run can be reproduced byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        // output paths are execution detail, not experiment identity
        let mut config = config.clone();
        config.out_dir = None;
        Self {
            tool: "autoresonance".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
        }
    }
}
