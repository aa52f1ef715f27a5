//! Inexact Newton-CG with Armijo backtracking for the MAP problem.
//!
//! CG is preconditioned by the prior covariance `C = R⁻¹`, and gradient
//! norms are measured in the matching dual norm `‖g‖_C = sqrt(gᵀ C g)`.
//! The PDE-solve count of a run is `2 + Σ_k (2 I_k + t_k + 1)`, where
//! `I_k` is the CG iteration count and `t_k` the number of trial points of
//! Newton step `k`, i.e. `2L + 2ΣI + 2 + (backtracks)`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::adjoint::{InverseProblem, OptimizationState};
use crate::error::{HdsaError, Result};
use crate::fem::NodalField;
use crate::forward::SolveCounter;
use crate::krylov::{pcg, CgExit};

const COST_NOISE: f64 = 1e-10;

/// Rule for the relative CG tolerance `η_k` of Newton step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    /// `η_k = min(0.5, sqrt(‖g_k‖ / ‖g_0‖))`.
    EisenstatWalker,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub grad_tol: f64,
    pub max_newton_steps: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub forcing: Forcing,
    pub max_cg_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_newton_steps: 50,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            forcing: Forcing::EisenstatWalker,
            max_cg_iterations: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(HdsaError::InvalidConfig {
                key: format!("solver.{key}"),
                reason: reason.into(),
            })
        };
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol", "must be positive");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1", "must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor", "must lie in (0, 1)");
        }
        if self.max_cg_iterations == 0 {
            return bad("max_cg_iterations", "must be positive");
        }
        if let Forcing::Fixed(eta) = self.forcing {
            if !(eta > 0.0 && eta < 1.0) {
                return bad("forcing", "fixed forcing term must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub newton_steps: usize,
    pub cg_iterations: usize,
    pub pde_solves: u64,
    pub backtracks: usize,
    pub negative_curvature_steps: usize,
    /// Stopped because neither cost nor gradient could be reduced further
    /// in floating point.
    pub stalled: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
}

impl SolveStats {
    /// Solves beyond `2L + 2ΣI`: the initial state/adjoint pair plus one
    /// extra state solve per rejected trial point.
    pub fn bookkeeping_solves(&self) -> u64 {
        2 + self.backtracks as u64
    }
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    pub m: NodalField,
    pub stats: SolveStats,
    /// State and adjoint at the returned point, ready for Hessian applies.
    pub state: OptimizationState,
}

/// `‖g‖_C` for a gradient coefficient vector.
pub fn gradient_norm(state: &OptimizationState, g: &NodalField) -> f64 {
    g.dot(&state.model().prior().apply_covariance(g)).max(0.0).sqrt()
}

/// Minimizes `J(·, θ)` from `m0`.
pub fn solve_map(problem: &InverseProblem, m0: &NodalField, cfg: &SolverConfig, counter: &SolveCounter) -> Result<MapSolution> {
    cfg.validate()?;
    if m0.iter().any(|v| !v.is_finite()) {
        return Err(HdsaError::NonFinite("initial MAP guess"));
    }
    let start = counter.get();
    let mut state = problem.state(m0, counter)?;
    let mut g = state.gradient();
    let g0 = gradient_norm(&state, &g);
    let target = cfg.grad_tol * g0.max(1.0);
    let mut stats = SolveStats {
        initial_cost: state.cost(),
        initial_grad_norm: g0,
        ..SolveStats::default()
    };
    let mut gnorm = g0;

    while gnorm > target && stats.newton_steps < cfg.max_newton_steps {
        let eta = match cfg.forcing {
            Forcing::EisenstatWalker => (gnorm / g0).sqrt().min(0.5),
            Forcing::Fixed(e) => e,
        };
        let prior = state.model().prior();
        let rhs = -&g;
        let cg = pcg(|v| state.hessian_apply(v), |r| prior.apply_covariance(r), &rhs, eta * gnorm, cfg.max_cg_iterations);
        stats.cg_iterations += cg.iterations;
        if cg.exit == CgExit::NegativeCurvature {
            stats.negative_curvature_steps += 1;
        }
        let mut dir = cg.x;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // Fall back to the preconditioned steepest-descent direction.
            dir = prior.apply_covariance(&rhs);
            slope = g.dot(&dir);
        }

        let j = state.cost();
        // State solves limit the accuracy of J to roughly 1e-11 relative.
        let slack = COST_NOISE * j.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for attempt in 0..=cfg.max_backtracks {
            let m_trial = state.m() + &dir * alpha;
            let trial = problem.trial(&m_trial, counter)?;
            let jt = trial.cost();
            if jt.is_finite() && jt <= j + cfg.armijo_c1 * alpha * slope + slack {
                accepted = Some(trial);
                break;
            }
            if attempt < cfg.max_backtracks {
                stats.backtracks += 1;
                alpha *= cfg.backtrack_factor;
            }
        }
        let Some(trial) = accepted else {
            warn!("line search failed at Newton step {}", stats.newton_steps + 1);
            return Err(HdsaError::LineSearchFailed(cfg.max_backtracks));
        };
        let predicted = -slope * alpha;
        state = problem.promote(trial);
        g = state.gradient();
        let previous = gnorm;
        gnorm = gradient_norm(&state, &g);
        stats.newton_steps += 1;
        debug!(
            "newton {}: J = {:.6e}, |g| = {:.3e}, cg = {}, alpha = {}",
            stats.newton_steps,
            state.cost(),
            gnorm,
            cg.iterations,
            alpha
        );
        if gnorm > target && gnorm >= previous && predicted <= slack {
            // Gradient noise floor: further steps cannot be resolved.
            stats.stalled = true;
            break;
        }
    }

    stats.converged = gnorm <= target;
    if !stats.converged {
        warn!("Newton-CG stopped after {} steps with |g| = {:.3e}", stats.newton_steps, gnorm);
    }
    stats.final_cost = state.cost();
    stats.final_grad_norm = gnorm;
    stats.pde_solves = counter.get() - start;
    Ok(MapSolution {
        m: state.m().clone(),
        stats,
        state,
    })
}
