//! JSON run configuration with paper-nominal defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adjoint::HessianMode;
use crate::error::{HdsaError, Result};
use crate::forward::{sensor_grid, ForwardModel};
use crate::hdsa::HdsaSetup;
use crate::lowrank::LowRankConfig;
use crate::newton::SolverConfig;
use crate::params::{default_auxiliary, Aux, ComplementaryParams, ModelConstants, DEFAULT_NOISE_SCALE, DEFAULT_NOISE_STD};
use crate::prior::PriorSpec;
use crate::scalar::ScalarProblem;

/// Partial override of one auxiliary scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

/// Sensor layout: explicit coordinates, or an interior `k×k` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub per_side: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<[f64; 2]>>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            per_side: 5,
            coordinates: None,
        }
    }
}

impl SensorConfig {
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.coordinates.clone().unwrap_or_else(|| sensor_grid(self.per_side))
    }
}

/// One standard deviation for all sensors, or one per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseStd {
    Uniform(f64),
    PerSensor(Vec<f64>),
}

impl Default for NoiseStd {
    fn default() -> Self {
        NoiseStd::Uniform(DEFAULT_NOISE_STD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpreadConfig {
    pub group_sizes: Vec<usize>,
    pub n_groups: usize,
    pub pool_size: usize,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        Self {
            group_sizes: vec![20, 100],
            n_groups: 10,
            pool_size: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub problem: ScalarProblem,
    pub n_samples: usize,
    pub fd_step: f64,
    pub grid_points: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            problem: ScalarProblem::default(),
            n_samples: 10,
            fd_step: 1e-5,
            grid_points: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Cells per side of the unit-square mesh.
    pub mesh: usize,
    pub prior: PriorSpec,
    /// Relative uncertainty scale applied to every auxiliary scalar unless
    /// overridden.
    pub auxiliary_scale: f64,
    pub auxiliary: BTreeMap<String, AuxOverride>,
    pub sensors: SensorConfig,
    pub noise_std: NoiseStd,
    pub noise_scale: f64,
    pub constants: ModelConstants,
    /// Synthesize data without noise.
    pub noiseless_data: bool,
    pub hessian_mode: HessianMode,
    pub solver: SolverConfig,
    pub lowrank: LowRankConfig,
    pub n_samples: usize,
    pub spread: SpreadConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub oracle: OracleConfig,
    /// Write per-sample fields as binary arrays.
    pub persist_samples: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: 32,
            prior: PriorSpec::default(),
            auxiliary_scale: 0.05,
            auxiliary: BTreeMap::new(),
            sensors: SensorConfig::default(),
            noise_std: NoiseStd::default(),
            noise_scale: DEFAULT_NOISE_SCALE,
            constants: ModelConstants::default(),
            noiseless_data: false,
            hessian_mode: HessianMode::default(),
            solver: SolverConfig::default(),
            lowrank: LowRankConfig::default(),
            n_samples: 100,
            spread: SpreadConfig::default(),
            seed: 0,
            output_dir: None,
            oracle: OracleConfig::default(),
            persist_samples: false,
        }
    }
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> HdsaError {
    HdsaError::InvalidConfig {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Parses and validates a JSON configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| HdsaError::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh < 2 {
            return Err(invalid("mesh", "needs at least 2 cells per side"));
        }
        self.prior.validate()?;
        if !(self.auxiliary_scale.is_finite() && self.auxiliary_scale >= 0.0) {
            return Err(invalid("auxiliary_scale", "must be nonnegative and finite"));
        }
        for (name, o) in &self.auxiliary {
            if Aux::from_name(name).is_none() {
                return Err(invalid(format!("auxiliary.{name}"), "unknown auxiliary parameter"));
            }
            if o.nominal.is_some_and(|v| !v.is_finite()) || o.scale.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                return Err(invalid(format!("auxiliary.{name}"), "nominal must be finite and scale nonnegative"));
            }
        }
        let sensors = self.sensors.points();
        if sensors.is_empty() {
            return Err(invalid("sensors", "at least one sensor is required"));
        }
        if sensors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("sensors.coordinates", "must lie in the unit square"));
        }
        match &self.noise_std {
            NoiseStd::Uniform(s) if !(s.is_finite() && *s >= 0.0) => {
                return Err(invalid("noise_std", format!("must be nonnegative, got {s}")));
            }
            NoiseStd::PerSensor(v) => {
                if v.len() != sensors.len() {
                    return Err(invalid("noise_std", format!("expected {} entries, got {}", sensors.len(), v.len())));
                }
                if let Some(s) = v.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(invalid("noise_std", format!("must be nonnegative, got {s}")));
                }
            }
            _ => {}
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(invalid("noise_scale", "must be nonnegative and finite"));
        }
        self.solver.validate()?;
        self.lowrank.validate()?;
        if self.n_samples == 0 {
            return Err(invalid("n_samples", "must be positive"));
        }
        let sp = &self.spread;
        if sp.n_groups == 0 || sp.group_sizes.is_empty() || sp.group_sizes.iter().any(|&g| g == 0 || g > sp.pool_size) {
            return Err(invalid("spread", "group sizes must lie in 1..=pool_size with at least one group"));
        }
        self.oracle.problem.validate()?;
        if self.oracle.n_samples == 0 {
            return Err(invalid("oracle.n_samples", "must be positive"));
        }
        if !(self.oracle.fd_step > 0.0 && self.oracle.fd_step.is_finite()) {
            return Err(invalid("oracle.fd_step", "must be positive"));
        }
        if self.oracle.grid_points < 3 {
            return Err(invalid("oracle.grid_points", "needs at least 3 points"));
        }
        self.params().validate()
    }

    pub fn sensor_points(&self) -> Vec<[f64; 2]> {
        self.sensors.points()
    }

    pub fn params(&self) -> ComplementaryParams {
        let mut aux = default_auxiliary();
        for p in aux.iter_mut() {
            p.scale = self.auxiliary_scale;
        }
        for (name, o) in &self.auxiliary {
            if let Some(a) = Aux::from_name(name) {
                let p = &mut aux[a.index()];
                p.nominal = o.nominal.unwrap_or(p.nominal);
                p.scale = o.scale.unwrap_or(p.scale);
            }
        }
        let n = self.sensors.points().len();
        let noise = match &self.noise_std {
            NoiseStd::Uniform(s) => vec![*s; n],
            NoiseStd::PerSensor(v) => v.clone(),
        };
        ComplementaryParams::new(aux, noise, self.noise_scale, self.constants)
    }

    pub fn model(&self) -> Result<ForwardModel> {
        ForwardModel::new(self.mesh, self.prior, &self.sensor_points())
    }

    pub fn setup(&self) -> Result<HdsaSetup> {
        let mut s = HdsaSetup::new(Arc::new(self.model()?), self.params());
        s.solver = self.solver;
        s.lowrank = self.lowrank;
        s.mode = self.hessian_mode;
        s.noiseless_data = self.noiseless_data;
        s.validate()?;
        Ok(s)
    }
}
