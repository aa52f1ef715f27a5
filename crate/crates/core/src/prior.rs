//! Gaussian prior with covariance `C = K⁻¹ M K⁻¹`, where
//! `K = α(Φ·stiffness + M)` discretizes the elliptic operator with natural
//! boundary conditions.
//!
//! Samples are `m = m_pr + K⁻¹ G ξ` with `G Gᵀ = M` (Cholesky of `M`), so the
//! sample covariance is exactly `C`. The regularization operator is
//! `R = C⁻¹ = K M⁻¹ K`, and `⟨a, b⟩_ℰ = aᵀ R b`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HdsaError, Result};
use crate::fem::{assemble_mass, assemble_stiffness, NodalField};
use crate::mesh::Mesh;
use crate::sparse::{BandedCholesky, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub alpha: f64,
    pub phi: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { alpha: 5.0, phi: 0.01 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(HdsaError::InvalidConfig {
                key: "prior.alpha".into(),
                reason: format!("must be positive, got {}", self.alpha),
            });
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(HdsaError::InvalidConfig {
                key: "prior.phi".into(),
                reason: format!("must be positive, got {}", self.phi),
            });
        }
        Ok(())
    }
}

/// `1.5 sin(2πx₁) cos(2πx₂) + 2` at the nodes.
pub fn prior_mean(mesh: &Mesh) -> NodalField {
    mesh.interpolate(|p| 1.5 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos() + 2.0)
}

/// Assembled and factored prior operators. Immutable once built.
#[derive(Debug, Clone)]
pub struct PriorOperators {
    spec: PriorSpec,
    elliptic: SparseOperator,
    mass: SparseOperator,
    elliptic_chol: BandedCholesky,
    mass_chol: BandedCholesky,
}

pub fn assemble_prior_operator(mesh: &Mesh, spec: PriorSpec) -> Result<PriorOperators> {
    PriorOperators::new(mesh, spec)
}

impl PriorOperators {
    pub fn new(mesh: &Mesh, spec: PriorSpec) -> Result<Self> {
        spec.validate()?;
        let mass = assemble_mass(mesh);
        let stiff = assemble_stiffness(mesh);
        let elliptic = stiff.linear_combination(spec.alpha * spec.phi, &mass, spec.alpha);
        let elliptic_chol = elliptic.cholesky()?;
        let mass_chol = mass.cholesky()?;
        Ok(Self {
            spec,
            elliptic,
            mass,
            elliptic_chol,
            mass_chol,
        })
    }

    pub fn spec(&self) -> PriorSpec {
        self.spec
    }

    /// The elliptic operator `K`.
    pub fn elliptic(&self) -> &SparseOperator {
        &self.elliptic
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    /// The mass factor `G` with `G Gᵀ = M`.
    pub fn mass_factor(&self) -> &BandedCholesky {
        &self.mass_chol
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn solve_mass(&self, v: &NodalField) -> NodalField {
        self.mass_chol.solve(v)
    }

    pub fn solve_elliptic(&self, v: &NodalField) -> NodalField {
        self.elliptic_chol.solve(v)
    }

    /// `R v = K M⁻¹ K v`.
    pub fn apply_regularization(&self, v: &NodalField) -> NodalField {
        let kv = self.elliptic.mul_vec(v);
        self.elliptic.mul_vec(&self.mass_chol.solve(&kv))
    }

    /// `C v = K⁻¹ M K⁻¹ v`, the inverse of [`Self::apply_regularization`].
    pub fn apply_covariance(&self, v: &NodalField) -> NodalField {
        let w = self.elliptic_chol.solve(v);
        self.elliptic_chol.solve(&self.mass.mul_vec(&w))
    }

    /// Square root `S = K⁻¹ G` of the covariance (`S Sᵀ = C`).
    pub fn apply_sqrt_covariance(&self, xi: &NodalField) -> NodalField {
        self.elliptic_chol.solve(&self.mass_chol.mul_lower(xi))
    }

    /// `Sᵀ v = Gᵀ K⁻¹ v`.
    pub fn apply_sqrt_covariance_transpose(&self, v: &NodalField) -> NodalField {
        self.mass_chol.mul_upper(&self.elliptic_chol.solve(v))
    }

    /// Cameron–Martin inner product `aᵀ R b`.
    pub fn cameron_martin(&self, a: &NodalField, b: &NodalField) -> f64 {
        a.dot(&self.apply_regularization(b))
    }

    /// Draws `m_pr + K⁻¹ G ξ` with `ξ` standard normal, seeded from `seed`.
    pub fn sample(&self, mean: &NodalField, seed: u64) -> NodalField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(mean, &mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, mean: &NodalField, rng: &mut R) -> NodalField {
        let xi = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        mean + self.apply_sqrt_covariance(&xi)
    }
}

pub fn sample_prior(ops: &PriorOperators, mean: &NodalField, seed: u64) -> NodalField {
    ops.sample(mean, seed)
}

pub fn apply_regularization(ops: &PriorOperators, v: &NodalField) -> NodalField {
    ops.apply_regularization(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use nalgebra::DMatrix;

    fn ops(n: usize) -> (Mesh, PriorOperators) {
        let mesh = build_mesh(n).unwrap();
        let ops = PriorOperators::new(&mesh, PriorSpec::default()).unwrap();
        (mesh, ops)
    }

    #[test]
    fn mean_values() {
        let mesh = build_mesh(4).unwrap();
        let m = prior_mean(&mesh);
        let at = |x: f64, y: f64| {
            let i = mesh
                .nodes()
                .iter()
                .position(|p| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12)
                .unwrap();
            m[i]
        };
        assert!((at(0.0, 0.0) - 2.0).abs() < 1e-14);
        assert!((at(0.25, 0.0) - 3.5).abs() < 1e-14);
        assert!((at(0.5, 0.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn elliptic_on_constants() {
        let (mesh, ops) = ops(5);
        let c = DVector::from_element(mesh.n_nodes(), 0.8);
        let q = ops.elliptic().bilinear(&c, &c);
        assert!((q - 5.0 * 0.64).abs() < 1e-12);
        // ⟨c,c⟩_ℰ = α² c² since K c = α M c.
        assert!((ops.cameron_martin(&c, &c) - 25.0 * 0.64).abs() < 1e-10);
    }

    #[test]
    fn covariance_inverts_regularization() {
        let (mesh, ops) = ops(6);
        let v = DVector::from_fn(mesh.n_nodes(), |i, _| ((i * 7 % 11) as f64 - 5.0) * 0.1);
        let back = ops.apply_covariance(&ops.apply_regularization(&v));
        assert!((&back - &v).norm() < 1e-10 * v.norm());
        let w = DVector::from_fn(mesh.n_nodes(), |i, _| (i as f64).cos());
        let (a, b) = (ops.cameron_martin(&v, &w), ops.cameron_martin(&w, &v));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn mass_factor_reproduces_mass() {
        let (_, ops) = ops(4);
        let n = ops.dim();
        let mut g = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            g.set_column(j, &ops.mass_factor().mul_lower(&e));
        }
        let m = ops.mass().to_dense();
        assert!((&g * g.transpose() - &m).amax() < 1e-12 * m.amax());
    }

    #[test]
    fn sampling_is_deterministic() {
        let (mesh, ops) = ops(4);
        let mean = prior_mean(&mesh);
        assert_eq!(ops.sample(&mean, 42), ops.sample(&mean, 42));
        assert_ne!(ops.sample(&mean, 42), ops.sample(&mean, 43));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mesh = build_mesh(3).unwrap();
        let bad = PriorSpec { alpha: -1.0, phi: 0.01 };
        assert!(matches!(
            PriorOperators::new(&mesh, bad),
            Err(HdsaError::InvalidConfig { key, .. }) if key == "prior.alpha"
        ));
    }
}
