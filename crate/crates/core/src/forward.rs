//! Parameter-to-observable map for steady heat conduction:
//!
//! ```text
//! -∇·(e^m ∇u) = f          in Ω
//!  e^m ∇u·n   = 0          on Γ₁ ∪ Γ₃
//!  e^m ∇u·n   = β(T_amb-u) on Γ₂
//!  e^m ∇u·n   = s(x₂)      on Γ₄
//! ```
//!
//! The discrete system is `[K(m) + β B₂] u = M f + B₄ s + β T_amb B₂ 1`,
//! with `B₂`, `B₄` the boundary mass matrices on Γ₂ and Γ₄.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HdsaError, Result};
use crate::fem::{
    assemble_boundary_mass, assemble_mass, assemble_weighted_stiffness_with, element_conductivity,
    LocalStiffness, NodalField,
};
use crate::mesh::{Mesh, Side};
use crate::params::{Aux, ComplementaryParams, N_AUX};
use crate::prior::{prior_mean, PriorOperators, PriorSpec};
use crate::sparse::{BandedCholesky, SparseOperator};

/// Shared counter of linear PDE solves (applications of a factored state
/// operator). Clones share the count.
#[derive(Debug, Clone, Default)]
pub struct SolveCounter(Arc<AtomicU64>);

impl SolveCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Evenly spaced interior `k×k` grid at `(i/(k+1), j/(k+1))`.
pub fn sensor_grid(per_side: usize) -> Vec<[f64; 2]> {
    let d = (per_side + 1) as f64;
    let mut pts = Vec::with_capacity(per_side * per_side);
    for j in 1..=per_side {
        for i in 1..=per_side {
            pts.push([i as f64 / d, j as f64 / d]);
        }
    }
    pts
}

/// Pointwise observation operator built from interpolation rows.
#[derive(Debug, Clone)]
pub struct Observer {
    coords: Vec<[f64; 2]>,
    rows: Vec<Vec<(usize, f64)>>,
    n_nodes: usize,
}

impl Observer {
    pub fn new(mesh: &Mesh, coords: &[[f64; 2]]) -> Result<Self> {
        let rows = coords
            .iter()
            .map(|&p| mesh.interpolation_row(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coords: coords.to_vec(),
            rows,
            n_nodes: mesh.n_nodes(),
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.rows.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn apply(&self, u: &NodalField) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.iter().map(|&(i, w)| w * u[i]).sum::<f64>()),
        )
    }

    pub fn apply_transpose(&self, d: &DVector<f64>) -> NodalField {
        let mut out = DVector::zeros(self.n_nodes);
        for (row, &v) in self.rows.iter().zip(d.iter()) {
            for &(i, w) in row {
                out[i] += w * v;
            }
        }
        out
    }
}

/// Observed data for one sample together with its stored noise draw.
///
/// At perturbation `θ_e` the data are `y + a θ_e ⊙ η̃`, i.e. the noise
/// realization scales with the multiplicative perturbation of σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub sensor_coords: Vec<[f64; 2]>,
    /// Data at the nominal point, `F(m_i, θ*) + η̃`.
    pub y: Vec<f64>,
    /// Noise draw at the nominal standard deviations.
    pub noise: Vec<f64>,
}

impl ObservationSet {
    pub fn n_sensors(&self) -> usize {
        self.y.len()
    }

    pub fn data(&self, params: &ComplementaryParams) -> DVector<f64> {
        DVector::from_fn(self.y.len(), |j, _| {
            self.y[j] + (params.noise_factor(j) - 1.0) * self.noise[j]
        })
    }

    /// Drops the stored noise draw, leaving `y = F(m_i, θ*)` with σ unchanged.
    pub fn noiseless(mut self) -> Self {
        for (y, e) in self.y.iter_mut().zip(self.noise.iter_mut()) {
            *y -= *e;
            *e = 0.0;
        }
        self
    }

    /// `d y_j / d θ_{e,j}`.
    pub fn data_rate(&self, params: &ComplementaryParams, j: usize) -> f64 {
        params.noise_scale * self.noise[j]
    }
}

/// Diagonal noise covariance `diag(σ_j(θ)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    pub variances: DVector<f64>,
}

impl NoiseCovariance {
    pub fn new(params: &ComplementaryParams) -> Result<Self> {
        let variances = DVector::from_fn(params.n_sensors(), |j, _| params.sigma(j).powi(2));
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(HdsaError::InvalidConfig {
                key: "noise_std".into(),
                reason: "realized noise standard deviations must be positive".into(),
            });
        }
        Ok(Self { variances })
    }

    pub fn precision(&self) -> DVector<f64> {
        self.variances.map(|v| 1.0 / v)
    }
}

/// `d(1/σ_j²)/dθ_{e,j} = -2 σ'_j / σ_j³`.
pub fn precision_rate(params: &ComplementaryParams, j: usize) -> f64 {
    -2.0 * params.sigma_rate(j) / params.sigma(j).powi(3)
}

fn rotated_gaussian(
    amp: f64,
    center: [f64; 2],
    gamma: f64,
    s1: f64,
    s2: f64,
    x: [f64; 2],
) -> (f64, [f64; 4]) {
    let (sn, cs) = gamma.sin_cos();
    let (s2g, c2g) = (2.0 * gamma).sin_cos();
    let (i1, i2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    let c11 = cs * cs * i1 + sn * sn * i2;
    let c22 = sn * sn * i1 + cs * cs * i2;
    let c12 = 0.5 * s2g * (i2 - i1);
    let d = [x[0] - center[0], x[1] - center[1]];
    let q = c11 * d[0] * d[0] + 2.0 * c12 * d[0] * d[1] + c22 * d[1] * d[1];
    let e = (-0.5 * q).exp();
    let cd = [c11 * d[0] + c12 * d[1], c12 * d[0] + c22 * d[1]];
    let dc11 = s2g * (i2 - i1);
    let dc12 = c2g * (i2 - i1);
    let dq = dc11 * d[0] * d[0] + 2.0 * dc12 * d[0] * d[1] - dc11 * d[1] * d[1];
    // d/d amp, d/d center₁, d/d center₂, d/d angle
    (amp * e, [e, amp * e * cd[0], amp * e * cd[1], -0.5 * amp * e * dq])
}

/// `f(x)` at realized parameters.
pub fn volume_source_at(params: &ComplementaryParams, x: [f64; 2]) -> f64 {
    volume_source_with_derivatives(params, x).0
}

/// `f(x)` and its derivatives with respect to the realized values of
/// `f1, f2, w1, w2, z1, z2, gamma1, gamma2`, in that order.
pub fn volume_source_with_derivatives(params: &ComplementaryParams, x: [f64; 2]) -> (f64, [f64; 8]) {
    let c = params.constants;
    let v = |a| params.value(a);
    let (g1, d1) = rotated_gaussian(v(Aux::F1), [v(Aux::W1), v(Aux::W2)], v(Aux::Gamma1), c.sigma_x1, c.sigma_x2, x);
    let (g2, d2) = rotated_gaussian(v(Aux::F2), [v(Aux::Z1), v(Aux::Z2)], v(Aux::Gamma2), c.sigma_x1, c.sigma_x2, x);
    (g1 + g2, [d1[0], d2[0], d1[1], d1[2], d2[1], d2[2], d1[3], d2[3]])
}

/// `s(x₂) = s1 exp(-((x₂ - s3)/s2)²)`.
pub fn boundary_source_at(params: &ComplementaryParams, x2: f64) -> f64 {
    boundary_source_with_derivatives(params, x2).0
}

/// `s(x₂)` and derivatives with respect to realized `s1, s2, s3`.
pub fn boundary_source_with_derivatives(params: &ComplementaryParams, x2: f64) -> (f64, [f64; 3]) {
    let (s1, s2, s3) = (params.value(Aux::S1), params.value(Aux::S2), params.value(Aux::S3));
    let r = (x2 - s3) / s2;
    let e = (-r * r).exp();
    (s1 * e, [e, s1 * e * 2.0 * r * r / s2, s1 * e * 2.0 * r / s2])
}

pub fn eval_volume_source(params: &ComplementaryParams, mesh: &Mesh) -> NodalField {
    mesh.interpolate(|p| volume_source_at(params, p))
}

/// Boundary source at the nodes of Γ₄ (zero elsewhere).
pub fn eval_boundary_source(params: &ComplementaryParams, mesh: &Mesh) -> NodalField {
    let mut s = DVector::zeros(mesh.n_nodes());
    for i in mesh.side_nodes(Side::Left) {
        s[i] = boundary_source_at(params, mesh.node(i)[1]);
    }
    s
}

/// Factored state operator `K(m) + β B₂` for one `(m, β)`.
#[derive(Debug, Clone)]
pub struct StateSystem {
    pub(crate) kappa: Vec<f64>,
    chol: BandedCholesky,
    counter: SolveCounter,
}

impl StateSystem {
    /// One linear PDE solve.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.counter.tick();
        self.chol.solve(rhs)
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn counter(&self) -> &SolveCounter {
        &self.counter
    }
}

/// Immutable discretized model shared by all sample pipelines.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: Mesh,
    local: LocalStiffness,
    mass: SparseOperator,
    robin_mass: SparseOperator,
    source_mass: SparseOperator,
    robin_ones: DVector<f64>,
    observer: Observer,
    prior: PriorOperators,
    prior_mean: NodalField,
}

impl ForwardModel {
    pub fn new(cells_per_side: usize, prior: PriorSpec, sensors: &[[f64; 2]]) -> Result<Self> {
        let mesh = Mesh::new(cells_per_side)?;
        let local = LocalStiffness::new(&mesh);
        let mass = assemble_mass(&mesh);
        let robin_mass = assemble_boundary_mass(&mesh, Side::Right);
        let source_mass = assemble_boundary_mass(&mesh, Side::Left);
        let robin_ones = robin_mass.mul_vec(&DVector::from_element(mesh.n_nodes(), 1.0));
        let observer = Observer::new(&mesh, sensors)?;
        let prior_ops = PriorOperators::new(&mesh, prior)?;
        let prior_mean = prior_mean(&mesh);
        Ok(Self {
            mesh,
            local,
            mass,
            robin_mass,
            source_mass,
            robin_ones,
            observer,
            prior: prior_ops,
            prior_mean,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn local_stiffness(&self) -> &LocalStiffness {
        &self.local
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn robin_mass(&self) -> &SparseOperator {
        &self.robin_mass
    }

    pub fn observer(&self) -> &Observer {
        &self.observer
    }

    pub fn prior(&self) -> &PriorOperators {
        &self.prior
    }

    pub fn prior_mean(&self) -> &NodalField {
        &self.prior_mean
    }

    pub fn with_prior_mean(mut self, mean: NodalField) -> Self {
        self.prior_mean = mean;
        self
    }

    /// Assembles `K(m) + β B₂` and factors it.
    pub fn state_system(&self, m: &NodalField, params: &ComplementaryParams, counter: &SolveCounter) -> Result<StateSystem> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HdsaError::NonFinite("parameter field"));
        }
        let beta = params.value(Aux::Beta);
        let k = assemble_weighted_stiffness_with(&self.mesh, &self.local, m);
        let a = k.linear_combination(1.0, &self.robin_mass, beta);
        let chol = a.cholesky()?;
        Ok(StateSystem {
            kappa: element_conductivity(&self.mesh, m),
            chol,
            counter: counter.clone(),
        })
    }

    /// Right-hand side `M f + B₄ s + β T_amb B₂ 1`.
    pub fn rhs(&self, params: &ComplementaryParams) -> DVector<f64> {
        let f = eval_volume_source(params, &self.mesh);
        let s = eval_boundary_source(params, &self.mesh);
        let beta = params.value(Aux::Beta);
        self.mass.mul_vec(&f) + self.source_mass.mul_vec(&s) + &self.robin_ones * (beta * params.constants.t_amb)
    }

    /// `∂(rhs)/∂θ_j` for every auxiliary parameter, in θ order.
    pub fn rhs_theta_derivatives(&self, params: &ComplementaryParams) -> Vec<DVector<f64>> {
        let n = self.n_nodes();
        let mut df = vec![DVector::zeros(n); 8];
        let mut ds = vec![DVector::zeros(n); 3];
        for (i, &p) in self.mesh.nodes().iter().enumerate() {
            let (_, d) = volume_source_with_derivatives(params, p);
            for k in 0..8 {
                df[k][i] = d[k];
            }
        }
        for i in self.mesh.side_nodes(Side::Left) {
            let (_, d) = boundary_source_with_derivatives(params, self.mesh.node(i)[1]);
            for k in 0..3 {
                ds[k][i] = d[k];
            }
        }
        let mut out = Vec::with_capacity(N_AUX);
        for a in Aux::ALL {
            let rate = params.rate(a);
            let v = match a {
                Aux::Beta => &self.robin_ones * params.constants.t_amb,
                Aux::S1 | Aux::S2 | Aux::S3 => self.source_mass.mul_vec(&ds[a.index() - 1]),
                _ => self.mass.mul_vec(&df[a.index() - 4]),
            };
            out.push(v * rate);
        }
        out
    }

    /// Solves the state equation at `(m, θ)`.
    pub fn solve_state(&self, m: &NodalField, params: &ComplementaryParams, counter: &SolveCounter) -> Result<NodalField> {
        let sys = self.state_system(m, params, counter)?;
        Ok(sys.solve(&self.rhs(params)))
    }

    pub fn observe(&self, u: &NodalField) -> DVector<f64> {
        self.observer.apply(u)
    }

    /// `F(m, θ_a)`.
    pub fn forward(&self, m: &NodalField, params: &ComplementaryParams, counter: &SolveCounter) -> Result<DVector<f64>> {
        Ok(self.observe(&self.solve_state(m, params, counter)?))
    }

    /// Synthesizes `y = F(m, θ*) + η̃` with `η̃ ~ N(0, σ̃²)` drawn from `seed`.
    /// One PDE solve.
    pub fn synthesize_data(
        &self,
        m: &NodalField,
        params: &ComplementaryParams,
        seed: u64,
        counter: &SolveCounter,
    ) -> Result<ObservationSet> {
        let nominal = params.at_nominal();
        let f = self.forward(m, &nominal, counter)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..f.len())
            .map(|j| {
                let xi: f64 = StandardNormal.sample(&mut rng);
                nominal.noise_std[j] * xi
            })
            .collect();
        let y = f.iter().zip(&noise).map(|(a, b)| a + b).collect();
        Ok(ObservationSet {
            sensor_coords: self.observer.coords().to_vec(),
            y,
            noise,
        })
    }
}
