//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use hdsa_core::adjoint::{InverseProblem, OptimizationState};
use hdsa_core::forward::{sensor_grid, ForwardModel, SolveCounter};
use hdsa_core::hdsa::HdsaSetup;
use hdsa_core::newton::{solve_map, SolverConfig};
use hdsa_core::params::ComplementaryParams;
use hdsa_core::prior::PriorSpec;
use hdsa_core::NodalField;

pub fn setup(n: usize) -> HdsaSetup {
    let model = Arc::new(ForwardModel::new(n, PriorSpec::default(), &sensor_grid(5)).expect("valid mesh"));
    HdsaSetup::new(model, ComplementaryParams::nominal(25))
}

/// Inverse problem for one prior draw, with the draw itself.
pub fn problem(n: usize, seed: u64) -> (InverseProblem, NodalField) {
    let s = setup(n);
    let m = s.model.prior().sample(s.model.prior_mean(), seed);
    let obs = s.model.synthesize_data(&m, &s.params, seed + 1, &SolveCounter::new()).expect("data");
    (s.problem(obs).expect("problem"), m)
}

/// Optimization state at the MAP point.
pub fn map_state(n: usize, seed: u64) -> OptimizationState {
    let (p, m) = problem(n, seed);
    solve_map(&p, &m, &SolverConfig::default(), &SolveCounter::new()).expect("MAP").state
}
