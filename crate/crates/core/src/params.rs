//! Complementary parameters: twelve auxiliary scalars and one noise standard
//! deviation per sensor.
//!
//! Every parameter is realized as `nominal · (1 + a·θ)` with a dimensionless
//! perturbation coordinate `θ`. Sensitivities are derivatives in `θ`, so a
//! unit perturbation means "a·100 percent of nominal".

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{HdsaError, Result};

/// Auxiliary scalars in θ order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aux {
    Beta = 0,
    S1,
    S2,
    S3,
    F1,
    F2,
    W1,
    W2,
    Z1,
    Z2,
    Gamma1,
    Gamma2,
}

pub const N_AUX: usize = 12;

impl Aux {
    pub const ALL: [Aux; N_AUX] = [
        Aux::Beta,
        Aux::S1,
        Aux::S2,
        Aux::S3,
        Aux::F1,
        Aux::F2,
        Aux::W1,
        Aux::W2,
        Aux::Z1,
        Aux::Z2,
        Aux::Gamma1,
        Aux::Gamma2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aux::Beta => "beta",
            Aux::S1 => "s1",
            Aux::S2 => "s2",
            Aux::S3 => "s3",
            Aux::F1 => "f1",
            Aux::F2 => "f2",
            Aux::W1 => "w1",
            Aux::W2 => "w2",
            Aux::Z1 => "z1",
            Aux::Z2 => "z2",
            Aux::Gamma1 => "gamma1",
            Aux::Gamma2 => "gamma2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Aux> {
        Aux::ALL.iter().copied().find(|a| a.name() == name)
    }
}

/// Nominal value and relative uncertainty scale of one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParam {
    pub nominal: f64,
    pub scale: f64,
}

impl ScalarParam {
    pub const fn new(nominal: f64, scale: f64) -> Self {
        Self { nominal, scale }
    }

    pub fn realize(&self, theta: f64) -> f64 {
        self.nominal * (1.0 + self.scale * theta)
    }

    /// `d(realized)/dθ`, constant in θ.
    pub fn rate(&self) -> f64 {
        self.nominal * self.scale
    }
}

/// Model constants that are not perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConstants {
    pub t_amb: f64,
    pub sigma_x1: f64,
    pub sigma_x2: f64,
}

impl Default for ModelConstants {
    fn default() -> Self {
        Self {
            t_amb: 22.0,
            sigma_x1: 0.8,
            sigma_x2: 0.1,
        }
    }
}

pub const DEFAULT_AUX_SCALE: f64 = 0.05;
pub const DEFAULT_NOISE_STD: f64 = 0.1;
pub const DEFAULT_NOISE_SCALE: f64 = 1.0;

pub fn default_auxiliary() -> [ScalarParam; N_AUX] {
    let a = DEFAULT_AUX_SCALE;
    [
        ScalarParam::new(1.0, a),
        ScalarParam::new(30.0, a),
        ScalarParam::new(0.1, a),
        ScalarParam::new(0.65, a),
        ScalarParam::new(100.0, a),
        ScalarParam::new(105.0, a),
        ScalarParam::new(0.8, a),
        ScalarParam::new(0.25, a),
        ScalarParam::new(0.5, a),
        ScalarParam::new(0.8, a),
        ScalarParam::new(-std::f64::consts::FRAC_PI_4, a),
        ScalarParam::new(0.15, a),
    ]
}

/// Complementary parameters with their current perturbation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryParams {
    pub auxiliary: [ScalarParam; N_AUX],
    /// Nominal noise standard deviation per sensor.
    pub noise_std: Vec<f64>,
    /// Relative scale for every noise standard deviation.
    pub noise_scale: f64,
    pub constants: ModelConstants,
    /// Perturbation coordinates, length `12 + n_y`; zero at the nominal point.
    theta: DVector<f64>,
}

impl ComplementaryParams {
    pub fn new(
        auxiliary: [ScalarParam; N_AUX],
        noise_std: Vec<f64>,
        noise_scale: f64,
        constants: ModelConstants,
    ) -> Self {
        let n = N_AUX + noise_std.len();
        Self {
            auxiliary,
            noise_std,
            noise_scale,
            constants,
            theta: DVector::zeros(n),
        }
    }

    /// Paper-nominal values with `n_y` sensors at σ = 0.1.
    pub fn nominal(n_sensors: usize) -> Self {
        Self::new(
            default_auxiliary(),
            vec![DEFAULT_NOISE_STD; n_sensors],
            DEFAULT_NOISE_SCALE,
            ModelConstants::default(),
        )
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.noise_std.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != self.n_theta() {
            return Err(HdsaError::DimensionMismatch {
                expected: self.n_theta(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        out.theta = theta;
        Ok(out)
    }

    /// Copy with `θ_j` shifted by `h`.
    pub fn perturbed(&self, j: usize, h: f64) -> Self {
        let mut out = self.clone();
        out.theta[j] += h;
        out
    }

    pub fn at_nominal(&self) -> Self {
        let mut out = self.clone();
        out.theta.fill(0.0);
        out
    }

    pub fn value(&self, a: Aux) -> f64 {
        self.auxiliary[a.index()].realize(self.theta[a.index()])
    }

    pub fn rate(&self, a: Aux) -> f64 {
        self.auxiliary[a.index()].rate()
    }

    /// Realized noise standard deviation at sensor `j`.
    pub fn sigma(&self, j: usize) -> f64 {
        self.noise_std[j] * (1.0 + self.noise_scale * self.theta[N_AUX + j])
    }

    /// `d σ_j / d θ_{e,j}`.
    pub fn sigma_rate(&self, j: usize) -> f64 {
        self.noise_std[j] * self.noise_scale
    }

    /// Relative perturbation factor `1 + a θ_{e,j}` applied to stored noise.
    pub fn noise_factor(&self, j: usize) -> f64 {
        1.0 + self.noise_scale * self.theta[N_AUX + j]
    }

    /// Parameter names in θ order.
    pub fn names(&self) -> Vec<String> {
        Aux::ALL
            .iter()
            .map(|a| a.name().to_string())
            .chain((0..self.n_sensors()).map(|j| format!("sigma{}", j + 1)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for a in Aux::ALL {
            let p = self.auxiliary[a.index()];
            if !p.nominal.is_finite() || !p.scale.is_finite() {
                return Err(HdsaError::InvalidConfig {
                    key: format!("auxiliary.{}", a.name()),
                    reason: "must be finite".into(),
                });
            }
        }
        for (key, a) in [("beta", Aux::Beta), ("s2", Aux::S2)] {
            if self.value(a) <= 0.0 {
                return Err(HdsaError::InvalidConfig {
                    key: format!("auxiliary.{key}"),
                    reason: "realized value must be positive".into(),
                });
            }
        }
        let c = self.constants;
        if !(c.sigma_x1 > 0.0 && c.sigma_x2 > 0.0) {
            return Err(HdsaError::InvalidConfig {
                key: "constants.sigma_x1/sigma_x2".into(),
                reason: "spreads must be positive".into(),
            });
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(HdsaError::InvalidConfig {
                key: "noise_std".into(),
                reason: "must be nonnegative and finite".into(),
            });
        }
        Ok(())
    }
}
