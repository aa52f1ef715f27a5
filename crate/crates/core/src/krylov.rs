//! Preconditioned conjugate gradients on matrix-free operators.

use nalgebra::DVector;

/// Why a CG run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgExit {
    Converged,
    NegativeCurvature,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub exit: CgExit,
    /// Preconditioned residual norm `sqrt(rᵀ P r)` at exit.
    pub residual: f64,
}

/// Solves `A x = b` from `x = 0` with preconditioner `P ≈ A⁻¹`.
///
/// Stops when `sqrt(rᵀ P r) ≤ tol`. A direction with `pᵀ A p ≤ 0` ends the
/// run (Steihaug): the current iterate is returned, or the preconditioned
/// right-hand side if no step has been taken yet.
pub fn pcg<A, P>(
    apply: A,
    precondition: P,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome
where
    A: FnMut(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut apply = apply;
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut z = precondition(&r);
    let mut rz = r.dot(&z);
    let mut p = z.clone();
    if rz.max(0.0).sqrt() <= tol {
        return CgOutcome {
            x,
            iterations: 0,
            exit: CgExit::Converged,
            residual: rz.max(0.0).sqrt(),
        };
    }
    for it in 0..max_iter {
        let ap = apply(&p);
        let curv = p.dot(&ap);
        if curv <= 0.0 || !curv.is_finite() {
            if it == 0 {
                x = p;
            }
            return CgOutcome {
                x,
                iterations: it + 1,
                exit: CgExit::NegativeCurvature,
                residual: rz.max(0.0).sqrt(),
            };
        }
        let alpha = rz / curv;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = precondition(&r);
        let rz_new = r.dot(&z);
        if rz_new.max(0.0).sqrt() <= tol {
            return CgOutcome {
                x,
                iterations: it + 1,
                exit: CgExit::Converged,
                residual: rz_new.max(0.0).sqrt(),
            };
        }
        let beta = rz_new / rz;
        p = &z + &p * beta;
        rz = rz_new;
    }
    CgOutcome {
        x,
        iterations: max_iter,
        exit: CgExit::MaxIterations,
        residual: rz.max(0.0).sqrt(),
    }
}
