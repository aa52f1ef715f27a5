//! PDE-solve accounting per pipeline phase.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub data_generation: u64,
    pub inverse_solve: u64,
    pub lowrank_build: u64,
    pub risk_sensitivity: u64,
    pub map_sensitivity: u64,
}

impl CostLedger {
    pub fn total(&self) -> u64 {
        self.data_generation + self.inverse_solve + self.lowrank_build + self.risk_sensitivity + self.map_sensitivity
    }
}

impl AddAssign for CostLedger {
    fn add_assign(&mut self, o: Self) {
        self.data_generation += o.data_generation;
        self.inverse_solve += o.inverse_solve;
        self.lowrank_build += o.lowrank_build;
        self.risk_sensitivity += o.risk_sensitivity;
        self.map_sensitivity += o.map_sensitivity;
    }
}

/// Table-style cost formulas evaluated from recorded iteration counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCosts {
    /// `1`.
    pub data_generation: u64,
    /// `2L + 2ΣI`.
    pub inverse_solve: u64,
    /// `2r + 2`, with `r` the number of Lanczos steps. The pipeline reuses
    /// the state/adjoint pair of the final Newton iterate, so it records `2r`.
    pub lowrank_build: u64,
    /// `2`.
    pub risk_sensitivity: u64,
    /// `2 n_θ`.
    pub map_sensitivity: u64,
}

impl ExpectedCosts {
    pub fn new(newton_steps: usize, cg_iterations: usize, lanczos_steps: Option<usize>, n_theta: usize) -> Self {
        Self {
            data_generation: 1,
            inverse_solve: 2 * newton_steps as u64 + 2 * cg_iterations as u64,
            lowrank_build: lanczos_steps.map_or(0, |r| 2 * r as u64 + 2),
            risk_sensitivity: 2,
            map_sensitivity: 2 * n_theta as u64,
        }
    }
}
