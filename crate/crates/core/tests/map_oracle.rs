mod common;

use hdsa_core::forward::SolveCounter;
use hdsa_core::newton::{gradient_norm, solve_map, SolverConfig};
use nalgebra::{DVector, SymmetricEigen};

/// Dense trust-region Newton over nodal coefficients: exact subproblem
/// solution through the eigendecomposition of the dense Hessian.
fn trust_region_oracle(prob: &hdsa_core::adjoint::InverseProblem, m0: &DVector<f64>) -> DVector<f64> {
    let c = SolveCounter::new();
    let mut m = m0.clone();
    let mut radius = 1.0;
    for _ in 0..200 {
        let s = prob.state(&m, &c).unwrap();
        let g = s.gradient();
        if g.norm() < 1e-11 {
            break;
        }
        let h = common::dense_hessian(&s);
        let eig = SymmetricEigen::new(h.clone());
        let gt = eig.eigenvectors.transpose() * &g;
        let step_for = |mu: f64| -> DVector<f64> {
            let y = DVector::from_fn(gt.len(), |i, _| -gt[i] / (eig.eigenvalues[i] + mu));
            &eig.eigenvectors * y
        };
        let lmin = eig.eigenvalues.min();
        let mut p = step_for(0.0);
        if lmin <= 0.0 || p.norm() > radius {
            let (mut lo, mut hi) = ((-lmin).max(0.0) + 1e-14, 1e12);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if step_for(mid).norm() > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            p = step_for(hi);
        }
        let predicted = -(g.dot(&p) + 0.5 * p.dot(&(&h * &p)));
        let actual = s.cost() - prob.cost(&(&m + &p), &c).unwrap();
        let rho = actual / predicted;
        if rho > 0.1 || (predicted.abs() < 1e-15 && actual >= 0.0) {
            m += &p;
        }
        if rho > 0.75 {
            radius *= 2.0;
        } else if rho < 0.25 {
            radius *= 0.25;
        }
    }
    m
}

#[test]
fn newton_cg_matches_dense_trust_region() {
    let (prob, truth) = common::problem(4, 13);
    let sol = solve_map(&prob, &truth, &SolverConfig::default(), &SolveCounter::new()).unwrap();
    assert!(sol.stats.converged);
    let oracle = trust_region_oracle(&prob, &truth);
    let diff = &sol.m - &oracle;
    let rel = common::m_norm(&sol.state, &diff) / common::m_norm(&sol.state, &oracle);
    println!("relative M-norm difference {rel:e}");
    assert!(rel < 1e-6);
}

#[test]
fn gradient_check_passes_at_map_point() {
    let (prob, truth) = common::problem(6, 17);
    let sol = solve_map(&prob, &truth, &SolverConfig::default(), &SolveCounter::new()).unwrap();
    let s = &sol.state;
    assert!(gradient_norm(s, &s.gradient()) <= 1e-8 * sol.stats.initial_grad_norm.max(1.0));
    let dir = DVector::from_fn(s.m().len(), |i, _| (1.3 * i as f64).sin());
    let c = SolveCounter::new();
    let h = 1e-4;
    let jp = prob.cost(&(s.m() + &dir * h), &c).unwrap();
    let jm = prob.cost(&(s.m() - &dir * h), &c).unwrap();
    let fd = (jp - jm) / (2.0 * h);
    let ad = s.gradient().dot(&dir);
    // Both are ~0 at the optimum; compare on the scale of the curvature term.
    let scale = dir.dot(&s.hessian_apply(&dir)) * h;
    assert!((fd - ad).abs() <= 1e-3 * scale, "fd {fd:e} adjoint {ad:e} scale {scale:e}");
}
