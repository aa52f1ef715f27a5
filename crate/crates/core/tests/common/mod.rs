#![allow(dead_code)]

use std::sync::Arc;

use hdsa_core::adjoint::{HessianMode, InverseProblem, OptimizationState};
use hdsa_core::forward::{sensor_grid, ForwardModel, SolveCounter};
use hdsa_core::params::ComplementaryParams;
use hdsa_core::prior::PriorSpec;
use hdsa_core::NodalField;
use nalgebra::{DMatrix, DVector};

/// Paper-nominal problem on an `n × n` mesh with data from the prior draw
/// `seed` and noise stream `seed + 1`.
pub fn problem(n: usize, seed: u64) -> (InverseProblem, NodalField) {
    let model = Arc::new(ForwardModel::new(n, PriorSpec::default(), &sensor_grid(5)).unwrap());
    let params = ComplementaryParams::nominal(25);
    let truth = model.prior().sample(model.prior_mean(), seed);
    let obs = model.synthesize_data(&truth, &params, seed + 1, &SolveCounter::new()).unwrap();
    (InverseProblem::new(model, obs, params).unwrap(), truth)
}

pub fn problem_with_mode(n: usize, seed: u64, mode: HessianMode) -> (InverseProblem, NodalField) {
    let (p, t) = problem(n, seed);
    (p.with_mode(mode), t)
}

/// Dense matrix of a linear operator on nodal fields.
pub fn dense<F: FnMut(&DVector<f64>) -> DVector<f64>>(n: usize, mut f: F) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        out.set_column(j, &f(&e));
    }
    out
}

pub fn dense_hessian(state: &OptimizationState) -> DMatrix<f64> {
    let h = dense(state.m().len(), |v| state.hessian_apply(v));
    (&h + h.transpose()) * 0.5
}

pub fn m_norm(state: &OptimizationState, v: &DVector<f64>) -> f64 {
    state.model().mass().bilinear(v, v).sqrt()
}
