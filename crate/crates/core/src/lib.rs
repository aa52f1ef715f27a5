//! Hyper-differential sensitivity analysis (HDSA) of a PDE-governed Bayesian
//! inverse problem.

pub mod adjoint;
pub mod config;
pub mod error;
pub mod fem;
pub mod forward;
pub mod hdsa;
pub mod krylov;
pub mod ledger;
pub mod lowrank;
pub mod mesh;
pub mod newton;
pub mod params;
pub mod prior;
pub mod scalar;
pub mod sparse;

pub use error::{HdsaError, Result};
pub use fem::NodalField;
