//! Adjoint-based derivatives of the MAP cost
//!
//! ```text
//! J(m, θ) = ½ (Ou - y(θ))ᵀ W(θ) (Ou - y(θ)) + ½ (m - m_pr)ᵀ R (m - m_pr)
//! ```
//!
//! subject to the discrete state equation `A(m, θ) u = b(θ)`. With the
//! Lagrangian `L = J - pᵀ(A u - b)`:
//!
//! * adjoint: `A p = Oᵀ W (Ou - y)`
//! * gradient: `g = R(m - m_pr) - ∂ₘ(pᵀ A u)`
//! * incremental state: `A û = -∂ₘA[m̂] u`
//! * incremental adjoint: `A p̂ = Oᵀ W O û - ∂ₘA[m̂] p`
//! * Hessian apply: `R m̂ - ∂ₘ(p̂ᵀ A u) - ∂ₘ(pᵀ A û) - ∂²ₘ(pᵀ A u)[m̂]`
//!
//! Mixed derivatives `B = ∂²J/∂m∂θ` are applied in both directions: `Bᵀ m̂`
//! reuses the incremental pair of `m̂`; `B θ̃` solves the θ-sensitivity
//! equations. Gradients are returned as coefficient vectors `g` with
//! `dJ[m̂] = gᵀ m̂` (the Euclidean dual pairing).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{HdsaError, Result};
use crate::fem::{stiffness_direction_apply, stiffness_gradient, stiffness_second_derivative, NodalField};
use crate::forward::{precision_rate, ForwardModel, NoiseCovariance, ObservationSet, SolveCounter, StateSystem};
use crate::params::{Aux, ComplementaryParams, N_AUX};

/// Which second-order terms the Hessian apply includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Exact Hessian, including terms weighted by the adjoint.
    #[default]
    FullNewton,
    /// Drops adjoint-weighted terms; positive semidefinite misfit part.
    GaussNewton,
}

static NEXT_STATE_ID: AtomicU64 = AtomicU64::new(1);

/// One MAP problem: shared model, one data set, complementary parameters.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    model: Arc<ForwardModel>,
    obs: ObservationSet,
    params: ComplementaryParams,
    data_weight: f64,
    mode: HessianMode,
}

impl InverseProblem {
    pub fn new(model: Arc<ForwardModel>, obs: ObservationSet, params: ComplementaryParams) -> Result<Self> {
        if obs.n_sensors() != params.n_sensors() || obs.n_sensors() != model.observer().n_sensors() {
            return Err(HdsaError::DimensionMismatch {
                expected: model.observer().n_sensors(),
                got: obs.n_sensors(),
            });
        }
        NoiseCovariance::new(&params)?;
        Ok(Self {
            model,
            obs,
            params,
            data_weight: 1.0,
            mode: HessianMode::FullNewton,
        })
    }

    /// Scales the misfit term; `0` leaves the pure prior problem.
    pub fn with_data_weight(mut self, w: f64) -> Self {
        self.data_weight = w;
        self
    }

    pub fn with_mode(mut self, mode: HessianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_params(&self, params: ComplementaryParams) -> Result<Self> {
        NoiseCovariance::new(&params)?;
        let mut out = self.clone();
        out.params = params;
        Ok(out)
    }

    pub fn model(&self) -> &Arc<ForwardModel> {
        &self.model
    }

    pub fn params(&self) -> &ComplementaryParams {
        &self.params
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    pub fn mode(&self) -> HessianMode {
        self.mode
    }

    pub fn data_weight(&self) -> f64 {
        self.data_weight
    }

    fn precision(&self) -> DVector<f64> {
        // Validated at construction.
        NoiseCovariance::new(&self.params)
            .map(|c| c.precision() * self.data_weight)
            .unwrap_or_else(|_| DVector::zeros(self.params.n_sensors()))
    }

    fn cost_parts(&self, m: &NodalField, u: &NodalField) -> (f64, f64, DVector<f64>) {
        let data = self.obs.data(&self.params);
        let r = self.model.observe(u) - data;
        let w = self.precision();
        let misfit = 0.5 * r.iter().zip(w.iter()).map(|(ri, wi)| wi * ri * ri).sum::<f64>();
        let d = m - self.model.prior_mean();
        let reg = 0.5 * self.model.prior().cameron_martin(&d, &d);
        (misfit, reg, r)
    }

    /// `J(m, θ)`; one PDE solve.
    pub fn cost(&self, m: &NodalField, counter: &SolveCounter) -> Result<f64> {
        let u = self.model.solve_state(m, &self.params, counter)?;
        let (mis, reg, _) = self.cost_parts(m, &u);
        Ok(mis + reg)
    }

    /// State solve only, returning the pieces needed to promote the point to
    /// a full [`OptimizationState`] later.
    pub fn trial(&self, m: &NodalField, counter: &SolveCounter) -> Result<TrialPoint> {
        let sys = self.model.state_system(m, &self.params, counter)?;
        let u = sys.solve(&self.model.rhs(&self.params));
        let (mis, reg, r) = self.cost_parts(m, &u);
        Ok(TrialPoint {
            m: m.clone(),
            u,
            sys,
            misfit: mis,
            regularization: reg,
            residual: r,
        })
    }

    /// State and adjoint at `m`; two PDE solves.
    pub fn state(&self, m: &NodalField, counter: &SolveCounter) -> Result<OptimizationState> {
        let t = self.trial(m, counter)?;
        Ok(self.promote(t))
    }

    /// Adds the adjoint solve to a trial point; one PDE solve.
    pub fn promote(&self, t: TrialPoint) -> OptimizationState {
        let w = self.precision();
        let rhs = self.model.observer().apply_transpose(&t.residual.component_mul(&w));
        let p = t.sys.solve(&rhs);
        OptimizationState {
            id: NEXT_STATE_ID.fetch_add(1, Ordering::Relaxed),
            problem: self.clone(),
            m: t.m,
            u: t.u,
            p,
            sys: t.sys,
            precision: w,
            residual: t.residual,
            misfit: t.misfit,
            regularization: t.regularization,
        }
    }
}

/// A point with a solved state but no adjoint.
#[derive(Debug, Clone)]
pub struct TrialPoint {
    pub m: NodalField,
    pub u: NodalField,
    sys: StateSystem,
    pub misfit: f64,
    pub regularization: f64,
    residual: DVector<f64>,
}

impl TrialPoint {
    pub fn cost(&self) -> f64 {
        self.misfit + self.regularization
    }
}

/// State and adjoint at `(m, θ)` with the factored state operator cached.
#[derive(Debug, Clone)]
pub struct OptimizationState {
    id: u64,
    problem: InverseProblem,
    m: NodalField,
    u: NodalField,
    p: NodalField,
    sys: StateSystem,
    precision: DVector<f64>,
    residual: DVector<f64>,
    misfit: f64,
    regularization: f64,
}

/// Incremental state and adjoint for one direction `m̂`.
#[derive(Debug, Clone)]
pub struct IncrementalState {
    state_id: u64,
    pub mhat: NodalField,
    pub uhat: NodalField,
    pub phat: NodalField,
}

impl OptimizationState {
    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    pub fn model(&self) -> &ForwardModel {
        &self.problem.model
    }

    pub fn params(&self) -> &ComplementaryParams {
        &self.problem.params
    }

    pub fn m(&self) -> &NodalField {
        &self.m
    }

    pub fn u(&self) -> &NodalField {
        &self.u
    }

    pub fn p(&self) -> &NodalField {
        &self.p
    }

    pub fn counter(&self) -> &SolveCounter {
        self.sys.counter()
    }

    pub fn cost(&self) -> f64 {
        self.misfit + self.regularization
    }

    pub fn misfit(&self) -> f64 {
        self.misfit
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Gradient coefficient vector; no PDE solves (state and adjoint cached).
    pub fn gradient(&self) -> NodalField {
        let model = self.model();
        let d = &self.m - model.prior_mean();
        model.prior().apply_regularization(&d)
            - stiffness_gradient(model.mesh(), model.local_stiffness(), self.sys.kappa(), &self.p, &self.u)
    }

    /// Solves the incremental state and adjoint for `m̂`; two PDE solves.
    pub fn incremental(&self, mhat: &NodalField) -> IncrementalState {
        let model = self.model();
        let (mesh, local, kappa) = (model.mesh(), model.local_stiffness(), self.sys.kappa());
        let uhat = self.sys.solve(&-stiffness_direction_apply(mesh, local, kappa, mhat, &self.u));
        let ou = model.observe(&uhat).component_mul(&self.precision);
        let rhs = model.observer().apply_transpose(&ou) - stiffness_direction_apply(mesh, local, kappa, mhat, &self.p);
        let phat = self.sys.solve(&rhs);
        IncrementalState {
            state_id: self.id,
            mhat: mhat.clone(),
            uhat,
            phat,
        }
    }

    /// Full-Newton Hessian apply from a solved incremental pair; no solves.
    pub fn hessian_from(&self, inc: &IncrementalState) -> Result<NodalField> {
        self.check(inc)?;
        let model = self.model();
        let (mesh, local, kappa) = (model.mesh(), model.local_stiffness(), self.sys.kappa());
        Ok(model.prior().apply_regularization(&inc.mhat)
            - stiffness_gradient(mesh, local, kappa, &inc.phat, &self.u)
            - stiffness_gradient(mesh, local, kappa, &self.p, &inc.uhat)
            - stiffness_second_derivative(mesh, local, kappa, &self.p, &self.u, &inc.mhat))
    }

    /// `H m̂`; two PDE solves.
    pub fn hessian_apply(&self, mhat: &NodalField) -> NodalField {
        match self.problem.mode {
            HessianMode::FullNewton => {
                let inc = self.incremental(mhat);
                self.hessian_from(&inc).expect("fresh incremental state")
            }
            HessianMode::GaussNewton => self.gauss_newton_apply(mhat),
        }
    }

    fn gauss_newton_apply(&self, mhat: &NodalField) -> NodalField {
        let model = self.model();
        let (mesh, local, kappa) = (model.mesh(), model.local_stiffness(), self.sys.kappa());
        let uhat = self.sys.solve(&-stiffness_direction_apply(mesh, local, kappa, mhat, &self.u));
        let ou = model.observe(&uhat).component_mul(&self.precision);
        let phat = self.sys.solve(&model.observer().apply_transpose(&ou));
        model.prior().apply_regularization(mhat) - stiffness_gradient(mesh, local, kappa, &phat, &self.u)
    }

    /// Data-misfit part of the Hessian, `H m̂ - R m̂`; two PDE solves.
    pub fn misfit_hessian_apply(&self, mhat: &NodalField) -> NodalField {
        self.hessian_apply(mhat) - self.model().prior().apply_regularization(mhat)
    }

    fn check(&self, inc: &IncrementalState) -> Result<()> {
        if inc.state_id != self.id {
            return Err(HdsaError::StaleIncrementalState);
        }
        Ok(())
    }

    /// `Bᵀ m̂` over all `n_θ` components from the incremental pair of `m̂`;
    /// no PDE solves.
    pub fn bt_apply(&self, inc: &IncrementalState) -> Result<DVector<f64>> {
        self.check(inc)?;
        let model = self.model();
        let params = self.params();
        let n_theta = params.n_theta();
        let mut out = DVector::zeros(n_theta);

        let db = model.rhs_theta_derivatives(params);
        let robin = model.robin_mass();
        let beta_rate = params.rate(Aux::Beta);
        for a in Aux::ALL {
            let j = a.index();
            // -p̂ᵀ(∂A u - ∂b) - pᵀ ∂A û
            let mut v = inc.phat.dot(&db[j]);
            if a == Aux::Beta {
                v -= beta_rate * robin.bilinear(&inc.phat, &self.u);
                v -= beta_rate * robin.bilinear(&self.p, &inc.uhat);
            }
            out[j] = v;
        }

        let ou = model.observe(&inc.uhat);
        let obs = self.problem.observations();
        let w = self.problem.data_weight;
        for k in 0..params.n_sensors() {
            let dw = w * precision_rate(params, k);
            let dy = obs.data_rate(params, k);
            out[N_AUX + k] = ou[k] * (dw * self.residual[k] - self.precision[k] * dy);
        }
        Ok(out)
    }

    /// `B θ̃`; two PDE solves.
    pub fn b_apply(&self, theta_dir: &DVector<f64>) -> Result<NodalField> {
        let params = self.params();
        if theta_dir.len() != params.n_theta() {
            return Err(HdsaError::DimensionMismatch {
                expected: params.n_theta(),
                got: theta_dir.len(),
            });
        }
        let model = self.model();
        let (mesh, local, kappa) = (model.mesh(), model.local_stiffness(), self.sys.kappa());
        let n = model.n_nodes();

        let db = model.rhs_theta_derivatives(params);
        let mut rhs_u = DVector::zeros(n);
        for (j, dbj) in db.iter().enumerate() {
            if theta_dir[j] != 0.0 {
                rhs_u.axpy(theta_dir[j], dbj, 1.0);
            }
        }
        let beta_dir = theta_dir[Aux::Beta.index()] * params.rate(Aux::Beta);
        if beta_dir != 0.0 {
            rhs_u -= model.robin_mass().mul_vec(&self.u) * beta_dir;
        }
        let utilde = self.sys.solve(&rhs_u);

        let obs = self.problem.observations();
        let w = self.problem.data_weight;
        let mut dvec = model.observe(&utilde).component_mul(&self.precision);
        for k in 0..params.n_sensors() {
            let t = theta_dir[N_AUX + k];
            if t != 0.0 {
                let dw = w * precision_rate(params, k);
                let dy = obs.data_rate(params, k);
                dvec[k] += t * (dw * self.residual[k] - self.precision[k] * dy);
            }
        }
        let mut rhs_p = model.observer().apply_transpose(&dvec);
        if beta_dir != 0.0 {
            rhs_p -= model.robin_mass().mul_vec(&self.p) * beta_dir;
        }
        let ptilde = self.sys.solve(&rhs_p);

        Ok(-stiffness_gradient(mesh, local, kappa, &ptilde, &self.u) - stiffness_gradient(mesh, local, kappa, &self.p, &utilde))
    }
}

/// `J(m, θ)` for the given problem; convenience wrapper.
pub fn cost(problem: &InverseProblem, m: &NodalField) -> Result<f64> {
    problem.cost(m, &SolveCounter::new())
}
