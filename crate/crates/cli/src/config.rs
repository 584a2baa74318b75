//! Experiment definitions: one JSON document per experiment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use modfun_core::estimator::{EstimatorConfig, Scheme};
use modfun_core::signals::TimeGrid;
use modfun_core::systems::{
    academic3, pendulum, DisturbanceLaw, PendulumParams, ACADEMIC3_X0, PENDULUM_X0,
};
use modfun_core::TriangularSystem;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemSpec,
    pub grid: GridSpec,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub noise: NoiseSweep,
    #[serde(default)]
    pub baselines: Baselines,
    #[serde(default)]
    pub metrics: Metrics,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Built-in benchmark or an integrator chain `y^(n) = d(t)` with polynomial `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Academic3 {
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
    Pendulum {
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        params: Option<PendulumSpec>,
    },
    Chain {
        order: usize,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        /// Coefficients of `d(t)` in increasing powers of `t`.
        #[serde(default)]
        disturbance: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumSpec {
    pub mass: f64,
    pub gravity: f64,
    pub length: f64,
    pub viscous: f64,
    pub coulomb: f64,
}

impl From<PendulumSpec> for PendulumParams {
    fn from(p: PendulumSpec) -> Self {
        PendulumParams {
            mass: p.mass,
            gravity: p.gravity,
            length: p.length,
            viscous: p.viscous,
            coulomb: p.coulomb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
}

/// Noise levels (percent of the output RMS) and replicates per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweep {
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn one() -> usize {
    1
}

impl Default for NoiseSweep {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            replicates: 1,
            master_seed: 0,
        }
    }
}

impl NoiseSweep {
    /// The levels actually run: an empty list means one noiseless run.
    pub fn effective_levels(&self) -> Vec<f64> {
        if self.levels.is_empty() {
            vec![0.0]
        } else {
            self.levels.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    #[serde(default)]
    pub sto: Option<StoSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoSpec {
    pub fplus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    /// Fraction of the estimate span dropped at each end for the disturbance error.
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
}

fn default_trim() -> f64 {
    0.05
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            trim_fraction: default_trim(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.grid.t0, self.grid.tf, self.grid.dt)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn pendulum_params(&self) -> Option<PendulumParams> {
        match &self.system {
            SystemSpec::Pendulum { params, .. } => Some(params.map(Into::into).unwrap_or_default()),
            _ => None,
        }
    }

    pub fn build_system(&self) -> Result<TriangularSystem, CliError> {
        let (sys, x0) = match &self.system {
            SystemSpec::Academic3 { x0 } => (
                academic3(),
                x0.clone().unwrap_or_else(|| ACADEMIC3_X0.to_vec()),
            ),
            SystemSpec::Pendulum { x0, .. } => (
                pendulum(self.pendulum_params().unwrap_or_default()),
                x0.clone().unwrap_or_else(|| PENDULUM_X0.to_vec()),
            ),
            SystemSpec::Chain {
                order,
                x0,
                disturbance,
            } => {
                let c = disturbance.clone();
                let law: DisturbanceLaw =
                    Arc::new(move |t, _| c.iter().rev().fold(0.0, |acc, v| acc * t + v));
                (
                    TriangularSystem::chain(*order, law),
                    x0.clone().unwrap_or_else(|| vec![0.0; *order]),
                )
            }
        };
        sys.with_x0(x0)
            .map_err(|e| CliError::Config(format!("system.x0: {e}")))
    }

    /// Checks every condition the pipeline relies on, naming the first violated one.
    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let SystemSpec::Chain { order: 0, .. } = self.system {
            return err("system.order must be at least 1".into());
        }
        let grid = self.time_grid()?;
        let sys = self.build_system()?;
        self.estimator
            .validate(sys.dim())
            .map_err(|e| CliError::Config(format!("estimator: {e}")))?;
        if let Scheme::Online { window, .. } = self.estimator.scheme {
            let span = grid.tf() - grid.t0();
            if window > span * (1.0 + 1e-12) {
                return err(format!(
                    "estimator: window h = {window} exceeds the horizon {span}"
                ));
            }
        }
        if let Some(&bad) = self
            .noise
            .levels
            .iter()
            .find(|l| !(l.is_finite() && **l >= 0.0))
        {
            return err(format!(
                "noise.levels: {bad} is not a nonnegative percentage"
            ));
        }
        if self.noise.replicates == 0 {
            return err("noise.replicates must be at least 1".into());
        }
        if let Some(sto) = self.baselines.sto {
            if !matches!(self.system, SystemSpec::Pendulum { .. }) {
                return err("baselines.sto is only defined for the pendulum system".into());
            }
            if !(sto.fplus > 0.0 && sto.fplus.is_finite()) {
                return err(format!(
                    "baselines.sto.fplus must be positive, got {}",
                    sto.fplus
                ));
            }
        }
        if !(0.0..0.5).contains(&self.metrics.trim_fraction) {
            return err(format!(
                "metrics.trim_fraction must lie in [0, 0.5), got {}",
                self.metrics.trim_fraction
            ));
        }
        if sys.dim() < 2 {
            return err("the system needs at least two states".into());
        }
        Ok(())
    }
}

/// Shipped experiment definitions.
pub const PRESETS: [(&str, &str, &str); 3] = [
    (
        "academic3-offline",
        "third-order academic example, one window over the whole record",
        include_str!("../presets/academic3-offline.json"),
    ),
    (
        "academic3-online",
        "third-order academic example, 1 s sliding window",
        include_str!("../presets/academic3-online.json"),
    ),
    (
        "pendulum-table1",
        "pendulum noise sweep against the super-twisting observer",
        include_str!("../presets/pendulum-table1.json"),
    ),
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, text)| ExperimentConfig::from_json(text).expect("shipped presets are valid"))
}

/// Resolves a path to a config file or, failing that, a preset name.
pub fn resolve(arg: &str) -> Result<ExperimentConfig, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    preset(arg).ok_or_else(|| {
        CliError::Config(format!(
            "{arg} is neither a config file nor a preset (see `modfun presets`)"
        ))
    })
}
