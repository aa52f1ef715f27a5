//! Low-rank approximation of the data-misfit Hessian and inverse-Hessian
//! applies.
//!
//! Lanczos runs on `C H_mis` in the `R` inner product, which is self-adjoint
//! there, and yields pairs with `H_mis v = λ R v`, `vᵀ R v = 1`. With
//! `H = R + H_mis`, Sherman–Morrison–Woodbury gives
//!
//! ```text
//! H⁻¹ ≈ C − Σᵢ λᵢ/(1+λᵢ) vᵢ vᵢᵀ
//! ```
//!
//! The formula only needs `λᵢ > −1`, i.e. `H` positive definite. The
//! full-Newton misfit Hessian is typically indefinite at the MAP point, so by
//! default signed eigenvalues are kept; [`IndefinitePolicy::CgFallback`]
//! instead clamps negative values to zero and switches the sample to CG.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adjoint::OptimizationState;
use crate::error::{HdsaError, Result};
use crate::fem::NodalField;
use crate::krylov::{pcg, CgExit};
use crate::prior::PriorOperators;

/// Ritz values below `-NEGATIVE_TOL · max(1, λ_max)` count as negative.
const NEGATIVE_TOL: f64 = 1e-10;

/// Margin above `-1` for a usable signed eigenvalue.
const POSITIVITY_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LowRankHessian {
    eigenvalues: Vec<f64>,
    vectors: Vec<NodalField>,
    prior: PriorOperators,
    lanczos_steps: usize,
    restarts: usize,
    min_ritz: f64,
    negative_count: usize,
}

/// Runs `steps` Lanczos iterations on the prior-preconditioned misfit
/// Hessian at `state`; each iteration costs two PDE solves.
pub fn build_lowrank(state: &OptimizationState, steps: usize, seed: u64) -> Result<LowRankHessian> {
    let prior = state.model().prior().clone();
    let n = prior.dim();
    if steps == 0 || steps > n {
        return Err(HdsaError::InvalidConfig {
            key: "lowrank.max_rank".into(),
            reason: format!("Lanczos steps must lie in 1..={n}, got {steps}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Lanczos basis q_k and R q_k.
    let mut q: Vec<NodalField> = Vec::with_capacity(steps);
    let mut rq: Vec<NodalField> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut restarts = 0;
    let mut scale = 0.0f64;

    let Some((q0, rq0)) = fresh_vector(&prior, &q, &rq, &mut rng) else {
        unreachable!("empty basis always admits a start vector");
    };
    let mut next = (q0, rq0);
    for k in 0..steps {
        let (qk, rqk) = next.clone();
        // w = C H_mis q_k
        let mut w = prior.apply_covariance(&state.misfit_hessian_apply(&qk));
        let a = w.dot(&rqk);
        q.push(qk);
        rq.push(rqk);
        alpha.push(a);
        scale = scale.max(a.abs());
        if k + 1 == steps {
            break;
        }
        // Full reorthogonalization, applied twice.
        for _ in 0..2 {
            for (qi, rqi) in q.iter().zip(&rq) {
                let c = w.dot(rqi);
                w.axpy(-c, qi, 1.0);
            }
        }
        let rw = prior.apply_regularization(&w);
        let b = w.dot(&rw).max(0.0).sqrt();
        scale = scale.max(b);
        if b <= 1e-10 * scale || b == 0.0 {
            restarts += 1;
            beta.push(0.0);
            match fresh_vector(&prior, &q, &rq, &mut rng) {
                Some(v) => next = v,
                None => break,
            }
        } else {
            beta.push(b);
            next = (w / b, rw / b);
        }
    }

    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lmax = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut negative_count = 0;
    let mut min_ritz = f64::INFINITY;
    for &i in &order {
        let lam = eig.eigenvalues[i];
        min_ritz = min_ritz.min(lam);
        if lam < -NEGATIVE_TOL * lmax.max(1.0) {
            negative_count += 1;
        }
        let y = eig.eigenvectors.column(i);
        let mut v = DVector::zeros(n);
        for (j, qj) in q.iter().enumerate() {
            v.axpy(y[j], qj, 1.0);
        }
        eigenvalues.push(lam);
        vectors.push(v);
    }
    Ok(LowRankHessian {
        eigenvalues,
        vectors,
        prior,
        lanczos_steps: k,
        restarts,
        min_ritz,
        negative_count,
    })
}

/// Random vector, `R`-orthogonal to the current basis and `R`-normalized.
fn fresh_vector(
    prior: &PriorOperators,
    q: &[NodalField],
    rq: &[NodalField],
    rng: &mut ChaCha8Rng,
) -> Option<(NodalField, NodalField)> {
    let n = prior.dim();
    if q.len() >= n {
        return None;
    }
    for _ in 0..10 {
        let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        let mut v = prior.apply_sqrt_covariance(&xi);
        for _ in 0..2 {
            for (qi, rqi) in q.iter().zip(rq) {
                let c = v.dot(rqi);
                v.axpy(-c, qi, 1.0);
            }
        }
        let rv = prior.apply_regularization(&v);
        let norm = v.dot(&rv).max(0.0).sqrt();
        if norm > 1e-8 {
            return Some((v / norm, rv / norm));
        }
    }
    None
}

impl LowRankHessian {
    /// Number of retained pairs.
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in nonincreasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `R`-orthonormal eigenvectors, aligned with [`Self::eigenvalues`].
    pub fn vectors(&self) -> &[NodalField] {
        &self.vectors
    }

    pub fn lanczos_steps(&self) -> usize {
        self.lanczos_steps
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    /// Smallest Ritz value found by the Lanczos run.
    pub fn min_ritz(&self) -> f64 {
        self.min_ritz
    }

    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    pub fn is_indefinite(&self) -> bool {
        self.negative_count > 0
    }

    /// Whether `R + H_mis` stays positive definite on the retained pairs.
    pub fn is_invertible(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l > -1.0 + POSITIVITY_MARGIN)
    }

    /// Copy with negative eigenvalues set to zero.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        out.eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
        out
    }

    /// Keeps the `r` pairs with the largest SMW weights `|λ/(1+λ)|`.
    pub fn truncated(&self, r: usize) -> Self {
        let weight = |l: f64| (l / (1.0 + l)).abs();
        let mut idx: Vec<usize> = (0..self.rank()).collect();
        idx.sort_by(|&a, &b| weight(self.eigenvalues[b]).total_cmp(&weight(self.eigenvalues[a])).then(a.cmp(&b)));
        idx.truncate(r);
        idx.sort_unstable();
        let mut out = self.clone();
        out.eigenvalues = idx.iter().map(|&i| self.eigenvalues[i]).collect();
        out.vectors = idx.iter().map(|&i| self.vectors[i].clone()).collect();
        out
    }

    /// Keeps pairs whose SMW weight exceeds that of `λ = threshold`, at most
    /// `cap` of them. For nonnegative spectra this is `λ > threshold`.
    pub fn thresholded(&self, threshold: f64, cap: usize) -> Self {
        let cut = threshold / (1.0 + threshold);
        let r = self.eigenvalues.iter().filter(|&&l| (l / (1.0 + l)).abs() > cut).count();
        self.truncated(r.min(cap))
    }

    /// `(C − V diag(λ/(1+λ)) Vᵀ) v`; no PDE solves.
    pub fn inv_apply(&self, v: &NodalField) -> NodalField {
        let mut out = self.prior.apply_covariance(v);
        for (lam, vec) in self.eigenvalues.iter().zip(&self.vectors) {
            let d = lam / (1.0 + lam);
            out.axpy(-d * vec.dot(v), vec, 1.0);
        }
        out
    }

    /// `(R + R V diag(λ) Vᵀ R) v`, the Hessian the factorization represents.
    pub fn apply(&self, v: &NodalField) -> NodalField {
        let rv = self.prior.apply_regularization(v);
        let mut acc = DVector::zeros(v.len());
        for (lam, vec) in self.eigenvalues.iter().zip(&self.vectors) {
            acc.axpy(lam * vec.dot(&rv), vec, 1.0);
        }
        rv + self.prior.apply_regularization(&acc)
    }
}

pub fn inv_apply(lr: &LowRankHessian, v: &NodalField) -> NodalField {
    lr.inv_apply(v)
}

/// How `H⁻¹` is applied in the sensitivity pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMethod {
    #[default]
    LowRank,
    Cg,
}

/// Treatment of negative misfit-Hessian eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndefinitePolicy {
    /// Keep signed eigenvalues while all exceed `-1`.
    #[default]
    Signed,
    /// Clamp negatives to zero and use CG for the sample.
    CgFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowRankConfig {
    pub method: InverseMethod,
    pub indefinite: IndefinitePolicy,
    /// Retain eigenvalues above this value.
    pub threshold: f64,
    /// Lanczos steps, which also caps the retained rank.
    pub max_rank: usize,
    /// Relative CG tolerance for CG-based applies.
    pub cg_tol: f64,
    pub cg_max_iterations: usize,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            method: InverseMethod::LowRank,
            indefinite: IndefinitePolicy::Signed,
            threshold: 0.1,
            max_rank: 50,
            cg_tol: 1e-10,
            cg_max_iterations: 500,
        }
    }
}

impl LowRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(HdsaError::InvalidConfig {
                key: "lowrank.threshold".into(),
                reason: "must be nonnegative".into(),
            });
        }
        if self.max_rank == 0 {
            return Err(HdsaError::InvalidConfig {
                key: "lowrank.max_rank".into(),
                reason: "must be positive".into(),
            });
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return Err(HdsaError::InvalidConfig {
                key: "lowrank.cg_tol".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// Inverse-Hessian operator for one sample.
#[derive(Debug, Clone)]
pub enum HessianInverse {
    LowRank(LowRankHessian),
    Cg {
        tol: f64,
        max_iterations: usize,
        /// The clamped decomposition when CG replaced an indefinite one.
        diagnostic: Option<Box<LowRankHessian>>,
    },
}

impl HessianInverse {
    /// Builds the configured inverse at `state`.
    pub fn build(state: &OptimizationState, cfg: &LowRankConfig, seed: u64) -> Result<Self> {
        let cg = |diagnostic| HessianInverse::Cg {
            tol: cfg.cg_tol,
            max_iterations: cfg.cg_max_iterations,
            diagnostic,
        };
        if cfg.method == InverseMethod::Cg {
            return Ok(cg(None));
        }
        let steps = cfg.max_rank.min(state.model().n_nodes());
        let lr = build_lowrank(state, steps, seed)?;
        if lr.is_indefinite() {
            let msg = format!(
                "misfit Hessian is indefinite: {} negative Ritz values, min {:.3e}",
                lr.negative_count(),
                lr.min_ritz()
            );
            if cfg.indefinite == IndefinitePolicy::CgFallback {
                warn!("{msg}; using CG");
                return Ok(cg(Some(Box::new(lr.clamped()))));
            }
            if !lr.is_invertible() {
                warn!("{msg}; Hessian not positive definite, using CG");
                return Ok(cg(None));
            }
            debug!("{msg}");
        }
        Ok(HessianInverse::LowRank(lr.thresholded(cfg.threshold, cfg.max_rank)))
    }

    pub fn low_rank(&self) -> Option<&LowRankHessian> {
        match self {
            HessianInverse::LowRank(lr) => Some(lr),
            HessianInverse::Cg { .. } => None,
        }
    }

    /// Lanczos steps spent building this operator.
    pub fn lanczos_steps(&self) -> Option<usize> {
        match self {
            HessianInverse::LowRank(lr) => Some(lr.lanczos_steps()),
            HessianInverse::Cg { diagnostic, .. } => diagnostic.as_ref().map(|d| d.lanczos_steps()),
        }
    }

    /// `H⁻¹ v`. CG applies cost two PDE solves per iteration.
    pub fn apply(&self, state: &OptimizationState, v: &NodalField) -> Result<NodalField> {
        match self {
            HessianInverse::LowRank(lr) => Ok(lr.inv_apply(v)),
            HessianInverse::Cg { tol, max_iterations, .. } => cg_inverse(state, v, *tol, *max_iterations),
        }
    }
}

/// Solves `H x = v` by CG preconditioned with `C`, relative tolerance `tol`
/// in the `C`-norm of the residual.
pub fn cg_inverse(state: &OptimizationState, v: &NodalField, tol: f64, max_iterations: usize) -> Result<NodalField> {
    let prior = state.model().prior();
    let vnorm = v.dot(&prior.apply_covariance(v)).max(0.0).sqrt();
    if vnorm == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let out = pcg(|x| state.hessian_apply(x), |r| prior.apply_covariance(r), v, tol * vnorm, max_iterations);
    match out.exit {
        CgExit::Converged => Ok(out.x),
        _ => Err(HdsaError::HessianSolve {
            iterations: out.iterations,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{HessianMode, InverseProblem};
    use crate::forward::{sensor_grid, ForwardModel, SolveCounter};
    use crate::params::ComplementaryParams;
    use crate::prior::PriorSpec;
    use std::sync::Arc;

    fn state(n: usize, mode: HessianMode, weight: f64) -> OptimizationState {
        let model = Arc::new(ForwardModel::new(n, PriorSpec::default(), &sensor_grid(5)).unwrap());
        let params = ComplementaryParams::nominal(25);
        let truth = model.prior().sample(model.prior_mean(), 2);
        let obs = model.synthesize_data(&truth, &params, 3, &SolveCounter::new()).unwrap();
        let prob = InverseProblem::new(model, obs, params).unwrap().with_mode(mode).with_data_weight(weight);
        prob.state(&truth, &SolveCounter::new()).unwrap()
    }

    #[test]
    fn zero_misfit_gives_zero_eigenvalues() {
        let s = state(4, HessianMode::FullNewton, 0.0);
        let lr = build_lowrank(&s, 10, 1).unwrap();
        assert!(lr.eigenvalues().iter().all(|&l| l == 0.0));
        assert!(lr.restarts() > 0);
        let v = DVector::from_fn(s.m().len(), |i, _| (i as f64).sin());
        let exact = s.model().prior().apply_covariance(&v);
        assert_eq!(lr.inv_apply(&v), exact);
    }

    #[test]
    fn solve_count_is_two_per_step() {
        let s = state(5, HessianMode::GaussNewton, 1.0);
        let before = s.counter().get();
        let lr = build_lowrank(&s, 12, 1).unwrap();
        assert_eq!(s.counter().get() - before, 2 * lr.lanczos_steps() as u64);
    }

    #[test]
    fn gauss_newton_spectrum_and_orthonormality() {
        let s = state(5, HessianMode::GaussNewton, 1.0);
        let lr = build_lowrank(&s, 30, 1).unwrap();
        assert!(!lr.is_indefinite());
        let ev = lr.eigenvalues();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        assert!(ev[0] > 1.0);
        let prior = s.model().prior();
        for (i, vi) in lr.vectors().iter().enumerate() {
            for (j, vj) in lr.vectors().iter().enumerate() {
                let g = prior.cameron_martin(vi, vj);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "({i},{j}) {g}");
            }
        }
    }

    #[test]
    fn thresholding_respects_cap() {
        let s = state(5, HessianMode::GaussNewton, 1.0);
        let lr = build_lowrank(&s, 30, 1).unwrap();
        let t = lr.thresholded(0.1, 5);
        assert!(t.rank() <= 5);
        assert!(t.eigenvalues().iter().all(|&l| l > 0.1));
        assert_eq!(lr.truncated(3).eigenvalues(), &lr.eigenvalues()[..3]);
    }

    #[test]
    fn cg_inverse_solves_hessian_system() {
        let s = state(5, HessianMode::FullNewton, 1.0);
        let v = DVector::from_fn(s.m().len(), |i, _| (0.3 * i as f64).cos());
        let x = cg_inverse(&s, &v, 1e-12, 200).unwrap();
        let back = s.hessian_apply(&x);
        assert!((&back - &v).norm() < 1e-9 * v.norm());
    }
}
