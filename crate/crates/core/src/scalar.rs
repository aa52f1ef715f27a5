//! One-dimensional heat-equation example with a closed-form forward map.
//!
//! ```text
//! y(x, t) = exp(-e^m t) sin x + exp(-4 c θ e^m t) sin 2x
//! ```
//!
//! with coupling `c = 1` by default. Setting `consistent_initial_condition`
//! swaps the second term for `exp(c θ) exp(-4 e^m t) sin 2x`, which matches
//! the initial condition `sin x + exp(θ) sin 2x`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HdsaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarProblem {
    pub prior_mean: f64,
    /// Read as a variance.
    pub prior_variance: f64,
    pub theta: f64,
    pub perturbed_theta: f64,
    pub noise_std: f64,
    pub sensors: Vec<f64>,
    pub time: f64,
    pub coupling: f64,
    pub consistent_initial_condition: bool,
}

impl Default for ScalarProblem {
    fn default() -> Self {
        Self {
            prior_mean: 1.3,
            prior_variance: 0.1,
            theta: -0.3,
            perturbed_theta: -0.29,
            noise_std: 26.0,
            sensors: (1..=6).map(|k| k as f64 * PI / 7.0).collect(),
            time: 1.0,
            coupling: 1.0,
            consistent_initial_condition: false,
        }
    }
}

/// `F` and its partial derivatives at one abscissa.
#[derive(Debug, Clone, Copy)]
struct Partials {
    f: f64,
    f_m: f64,
    f_mm: f64,
    f_t: f64,
    f_mt: f64,
}

impl ScalarProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(HdsaError::InvalidConfig {
                key: format!("oracle.{key}"),
                reason: reason.into(),
            })
        };
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", "must be positive");
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return bad("prior_variance", "must be positive");
        }
        if self.sensors.is_empty() || self.sensors.iter().any(|&x| !(x > 0.0 && x < PI)) {
            return bad("sensors", "must be nonempty and strictly inside (0, pi)");
        }
        if !(self.time > 0.0) {
            return bad("time", "must be positive");
        }
        if ![self.prior_mean, self.theta, self.perturbed_theta, self.coupling].iter().all(|v| v.is_finite()) {
            return bad("theta", "values must be finite");
        }
        Ok(())
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_variance.sqrt()
    }

    pub fn forward(&self, m: f64, theta: f64, x: f64) -> f64 {
        self.partials(m, theta, x).f
    }

    fn partials(&self, m: f64, theta: f64, x: f64) -> Partials {
        let (t, c) = (self.time, self.coupling);
        let em = m.exp();
        let a = (-em * t).exp();
        let (s1, s2) = (x.sin(), (2.0 * x).sin());
        // First term: a(m) sin x with a' = -e^m t a, a'' = (e^{2m} t² - e^m t) a.
        let f1 = a * s1;
        let f1_m = -em * t * a * s1;
        let f1_mm = (em * em * t * t - em * t) * a * s1;
        let (f2, f2_m, f2_mm, f2_t, f2_mt) = if self.consistent_initial_condition {
            let b = (c * theta).exp() * (-4.0 * em * t).exp();
            let k = -4.0 * em * t;
            (b * s2, k * b * s2, (k * k + k) * b * s2, c * b * s2, c * k * b * s2)
        } else {
            let k = -4.0 * c * theta * t;
            let b = (k * em).exp();
            let g = k * em;
            // d/dθ of g = -4 c t e^m.
            let g_t = -4.0 * c * t * em;
            (b * s2, g * b * s2, (g * g + g) * b * s2, g_t * b * s2, (g_t + g * g_t) * b * s2)
        };
        Partials {
            f: f1 + f2,
            f_m: f1_m + f2_m,
            f_mm: f1_mm + f2_mm,
            f_t: f2_t,
            f_mt: f2_mt,
        }
    }

    /// Negative log-posterior `J(m)` and its derivatives `J_m`, `J_mm`, `J_mθ`.
    fn objective(&self, y: &[f64], theta: f64, m: f64) -> (f64, f64, f64, f64) {
        let w = 1.0 / (self.noise_std * self.noise_std);
        let d = m - self.prior_mean;
        let (mut j, mut jm, mut jmm, mut jmt) = (0.5 * d * d / self.prior_variance, d / self.prior_variance, 1.0 / self.prior_variance, 0.0);
        for (&x, &yk) in self.sensors.iter().zip(y) {
            let p = self.partials(m, theta, x);
            let r = p.f - yk;
            j += 0.5 * w * r * r;
            jm += w * r * p.f_m;
            jmm += w * (p.f_m * p.f_m + r * p.f_mm);
            jmt += w * (p.f_t * p.f_m + r * p.f_mt);
        }
        (j, jm, jmm, jmt)
    }

    pub fn cost(&self, y: &[f64], theta: f64, m: f64) -> f64 {
        self.objective(y, theta, m).0
    }

    /// Noisy observations of `m` at the sensors.
    pub fn synthesize(&self, m: f64, theta: f64, noise: &[f64]) -> Vec<f64> {
        self.sensors.iter().zip(noise).map(|(&x, e)| self.forward(m, theta, x) + e).collect()
    }

    fn check_data(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.sensors.len() {
            return Err(HdsaError::DimensionMismatch {
                expected: self.sensors.len(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Posterior density on `grid`, normalized by the trapezoid rule.
    pub fn posterior_pdf(&self, y: &[f64], theta: f64, grid: &[f64]) -> Result<Vec<f64>> {
        self.check_data(y)?;
        check_grid(grid, 6.0 * self.prior_std())?;
        let costs: Vec<f64> = grid.iter().map(|&m| self.cost(y, theta, m)).collect();
        let jmin = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let dens: Vec<f64> = costs.iter().map(|j| (jmin - j).exp()).collect();
        normalize(grid, dens)
    }

    pub fn prior_pdf(&self, grid: &[f64]) -> Result<Vec<f64>> {
        check_grid(grid, 6.0 * self.prior_std())?;
        let v = self.prior_variance;
        let dens = grid.iter().map(|&m| (-(m - self.prior_mean).powi(2) / (2.0 * v)).exp()).collect();
        normalize(grid, dens)
    }

    /// Default plotting grid: `n` points over the prior mean ± 8 standard
    /// deviations.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let half = 8.0 * self.prior_std();
        let (lo, hi) = (self.prior_mean - half, self.prior_mean + half);
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// MAP point by safeguarded Newton on `J_m = 0`, bracketed around the
    /// best point of a coarse scan.
    pub fn map_point(&self, y: &[f64], theta: f64) -> Result<f64> {
        self.check_data(y)?;
        let scan = self.grid(801);
        let (mut best, mut best_j) = (0, f64::INFINITY);
        for (i, &m) in scan.iter().enumerate() {
            let j = self.cost(y, theta, m);
            if j < best_j {
                best = i;
                best_j = j;
            }
        }
        if best == 0 || best == scan.len() - 1 {
            return Err(HdsaError::ScalarMap("minimizer lies on the search boundary".into()));
        }
        let (mut lo, mut hi) = (scan[best - 1], scan[best + 1]);
        let grad = |m: f64| self.objective(y, theta, m).1;
        if !(grad(lo) <= 0.0 && grad(hi) >= 0.0) {
            return Err(HdsaError::ScalarMap("no sign change of the gradient around the scan minimum".into()));
        }
        let mut m = scan[best];
        for _ in 0..200 {
            let (_, g, h, _) = self.objective(y, theta, m);
            if g.abs() <= 1e-12 {
                return Ok(m);
            }
            if g < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
            let newton = m - g / h;
            m = if h > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * m.abs().max(1.0) {
                return Ok(m);
            }
        }
        Err(HdsaError::ScalarMap("safeguarded Newton did not converge".into()))
    }

    /// `dm*/dθ = -J_mθ / J_mm` at the MAP point.
    pub fn map_derivative(&self, y: &[f64], theta: f64, map: f64) -> f64 {
        let (_, _, jmm, jmt) = self.objective(y, theta, map);
        -jmt / jmm
    }

    /// Second derivative of `J` at `m`, the inverse Laplace variance.
    pub fn curvature(&self, y: &[f64], theta: f64, m: f64) -> f64 {
        self.objective(y, theta, m).2
    }
}

fn check_grid(grid: &[f64], min_width: f64) -> Result<()> {
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HdsaError::DegenerateGrid("grid must be strictly increasing with at least 3 points".into()));
    }
    if grid[grid.len() - 1] - grid[0] < min_width {
        return Err(HdsaError::DegenerateGrid(format!("grid must span at least {min_width}")));
    }
    Ok(())
}

pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum()
}

fn normalize(grid: &[f64], dens: Vec<f64>) -> Result<Vec<f64>> {
    let z = trapezoid(grid, &dens);
    if !(z > 0.0 && z.is_finite()) {
        return Err(HdsaError::DegenerateGrid("density has no mass on the grid".into()));
    }
    Ok(dens.into_iter().map(|d| d / z).collect())
}

/// Mean and standard deviation of a gridded density.
pub fn moments(grid: &[f64], pdf: &[f64]) -> (f64, f64) {
    let mean = trapezoid(grid, &grid.iter().zip(pdf).map(|(m, p)| m * p).collect::<Vec<_>>());
    let var = trapezoid(grid, &grid.iter().zip(pdf).map(|(m, p)| (m - mean).powi(2) * p).collect::<Vec<_>>());
    (mean, var.sqrt())
}

/// Grid point of largest density.
pub fn argmax(grid: &[f64], pdf: &[f64]) -> f64 {
    let i = pdf.iter().enumerate().fold(0, |b, (i, &p)| if p > pdf[b] { i } else { b });
    grid[i]
}

/// Prior draws and noisy data for sample `i`.
pub fn scalar_sample(problem: &ScalarProblem, seed: u64, index: usize) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let prior = Normal::new(problem.prior_mean, problem.prior_std()).expect("validated prior");
    let noise = Normal::new(0.0, problem.noise_std).expect("validated noise");
    let m = prior.sample(&mut rng);
    let eps: Vec<f64> = (0..problem.sensors.len()).map(|_| noise.sample(&mut rng)).collect();
    (m, problem.synthesize(m, problem.theta, &eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarHdsa {
    pub bayes_risk: f64,
    pub average_map_norm: f64,
    /// `(2/n) Σ J_mθ z_i` with `z_i = -(m*_i - m_i) / J_mm`.
    pub risk_sensitivity: f64,
    /// Central difference of the re-solved Bayes risk.
    pub risk_sensitivity_fd: f64,
    /// `(1/n) Σ |dm*_i/dθ|`.
    pub map_sensitivity: f64,
    pub map_sensitivity_fd: f64,
}

/// Scalar sensitivities by formula and by central differences with step `h`.
pub fn scalar_hdsa(problem: &ScalarProblem, n_samples: usize, seed: u64, h: f64) -> Result<ScalarHdsa> {
    problem.validate()?;
    if n_samples == 0 {
        return Err(HdsaError::NoSamples);
    }
    let th = problem.theta;
    let n = n_samples as f64;
    let mut out = ScalarHdsa {
        bayes_risk: 0.0,
        average_map_norm: 0.0,
        risk_sensitivity: 0.0,
        risk_sensitivity_fd: 0.0,
        map_sensitivity: 0.0,
        map_sensitivity_fd: 0.0,
    };
    for i in 0..n_samples {
        let (m, y) = scalar_sample(problem, seed, i);
        let map = problem.map_point(&y, th)?;
        let (_, _, jmm, jmt) = problem.objective(&y, th, map);
        let z = -(map - m) / jmm;
        let (plus, minus) = (problem.map_point(&y, th + h)?, problem.map_point(&y, th - h)?);
        out.bayes_risk += (map - m).powi(2) / n;
        out.average_map_norm += map.abs() / n;
        out.risk_sensitivity += 2.0 * jmt * z / n;
        out.risk_sensitivity_fd += ((plus - m).powi(2) - (minus - m).powi(2)) / (2.0 * h * n);
        out.map_sensitivity += (jmt / jmm).abs() / n;
        out.map_sensitivity_fd += ((plus - minus) / (2.0 * h)).abs() / n;
    }
    Ok(out)
}

/// Curves for the nominal/perturbed posterior comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorComparison {
    pub truth: f64,
    pub data: Vec<f64>,
    pub curve_x: Vec<f64>,
    pub curve_y: Vec<f64>,
    pub grid: Vec<f64>,
    pub prior: Vec<f64>,
    pub nominal: Vec<f64>,
    pub perturbed: Vec<f64>,
}

/// Data from `m = prior mean` with seeded noise, and the prior and both
/// posterior densities on the default grid.
pub fn posterior_comparison(problem: &ScalarProblem, seed: u64, n_grid: usize) -> Result<PosteriorComparison> {
    problem.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, problem.noise_std).expect("validated noise");
    let eps: Vec<f64> = (0..problem.sensors.len()).map(|_| noise.sample(&mut rng)).collect();
    let truth = problem.prior_mean;
    let data = problem.synthesize(truth, problem.theta, &eps);
    let curve_x: Vec<f64> = (0..=200).map(|i| PI * i as f64 / 200.0).collect();
    let curve_y = curve_x.iter().map(|&x| problem.forward(truth, problem.theta, x)).collect();
    let grid = problem.grid(n_grid);
    Ok(PosteriorComparison {
        prior: problem.prior_pdf(&grid)?,
        nominal: problem.posterior_pdf(&data, problem.theta, &grid)?,
        perturbed: problem.posterior_pdf(&data, problem.perturbed_theta, &grid)?,
        truth,
        data,
        curve_x,
        curve_y,
        grid,
    })
}
