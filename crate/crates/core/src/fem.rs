//! P1 assembly on [`Mesh`]: mass, log-coefficient weighted stiffness,
//! boundary mass, and the coefficient-derivative contractions used by the
//! adjoint code.
//!
//! The conductivity on triangle `T` is `κ_T = exp(m̄_T)`, where `m̄_T` is the
//! mean of the three nodal values of `m` (the interpolant evaluated at the
//! centroid). All derivative routines below differentiate exactly this form.

use nalgebra::DVector;

use crate::mesh::{Mesh, Side};
use crate::sparse::SparseOperator;

pub type NodalField = DVector<f64>;

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.signed_area(t);
        for a in 0..3 {
            for b in 0..3 {
                let w = if a == b { area / 6.0 } else { area / 12.0 };
                trip.push((tri[a], tri[b], w));
            }
        }
    }
    SparseOperator::from_triplets(mesh.n_nodes(), &trip)
}

/// Per-triangle unweighted stiffness blocks `|T| ∇φ_a·∇φ_b`.
#[derive(Debug, Clone)]
pub struct LocalStiffness {
    blocks: Vec<[[f64; 3]; 3]>,
}

impl LocalStiffness {
    pub fn new(mesh: &Mesh) -> Self {
        let blocks = (0..mesh.triangles().len())
            .map(|t| {
                let area = mesh.signed_area(t);
                let g = mesh.basis_gradients(t);
                let mut k = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        k[a][b] = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
                k
            })
            .collect();
        Self { blocks }
    }

    pub fn block(&self, t: usize) -> &[[f64; 3]; 3] {
        &self.blocks[t]
    }
}

fn local_form(k: &[[f64; 3]; 3], x: [f64; 3], y: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += x[a] * k[a][b] * y[b];
        }
    }
    s
}

fn gather(tri: &[usize; 3], v: &DVector<f64>) -> [f64; 3] {
    [v[tri[0]], v[tri[1]], v[tri[2]]]
}

/// Per-triangle conductivities `exp(mean of nodal m)`.
pub fn element_conductivity(mesh: &Mesh, m: &NodalField) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|tri| ((m[tri[0]] + m[tri[1]] + m[tri[2]]) / 3.0).exp())
        .collect()
}

fn assemble_with_weights(mesh: &Mesh, local: &LocalStiffness, weights: &[f64]) -> SparseOperator {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let k = local.block(t);
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], weights[t] * k[a][b]));
            }
        }
    }
    SparseOperator::from_triplets(mesh.n_nodes(), &trip)
}

/// `∫ e^m ∇φ_i·∇φ_j` with one-point centroid quadrature of `e^m`.
pub fn assemble_weighted_stiffness(mesh: &Mesh, m: &NodalField) -> SparseOperator {
    let local = LocalStiffness::new(mesh);
    assemble_weighted_stiffness_with(mesh, &local, m)
}

pub fn assemble_weighted_stiffness_with(mesh: &Mesh, local: &LocalStiffness, m: &NodalField) -> SparseOperator {
    assemble_with_weights(mesh, local, &element_conductivity(mesh, m))
}

/// Plain Laplacian stiffness `∫ ∇φ_i·∇φ_j`.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseOperator {
    let local = LocalStiffness::new(mesh);
    assemble_with_weights(mesh, &local, &vec![1.0; mesh.triangles().len()])
}

/// 1D consistent mass on the edges of one boundary side.
pub fn assemble_boundary_mass(mesh: &Mesh, side: Side) -> SparseOperator {
    let mut trip = Vec::new();
    for e in mesh.boundary_edges().iter().filter(|e| e.side == side) {
        let [a, b] = e.nodes;
        let (pa, pb) = (mesh.node(a), mesh.node(b));
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        trip.push((a, a, len / 3.0));
        trip.push((b, b, len / 3.0));
        trip.push((a, b, len / 6.0));
        trip.push((b, a, len / 6.0));
    }
    SparseOperator::from_triplets(mesh.n_nodes(), &trip)
}

/// Gradient in `m` of `xᵀ K(m) y`: entry `a` is `Σ_{T∋a} κ_T/3 · x_Tᵀ K_T y_T`.
pub fn stiffness_gradient(
    mesh: &Mesh,
    local: &LocalStiffness,
    kappa: &[f64],
    x: &NodalField,
    y: &NodalField,
) -> NodalField {
    let mut out = DVector::zeros(mesh.n_nodes());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let v = kappa[t] / 3.0 * local_form(local.block(t), gather(tri, x), gather(tri, y));
        for &a in tri {
            out[a] += v;
        }
    }
    out
}

/// Directional derivative of the stiffness applied to a vector:
/// `(dK/dm [m̂]) y`.
pub fn stiffness_direction_apply(
    mesh: &Mesh,
    local: &LocalStiffness,
    kappa: &[f64],
    mhat: &NodalField,
    y: &NodalField,
) -> NodalField {
    let mut out = DVector::zeros(mesh.n_nodes());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let w = kappa[t] * (mhat[tri[0]] + mhat[tri[1]] + mhat[tri[2]]) / 3.0;
        if w == 0.0 {
            continue;
        }
        let k = local.block(t);
        let yt = gather(tri, y);
        for a in 0..3 {
            out[tri[a]] += w * (k[a][0] * yt[0] + k[a][1] * yt[1] + k[a][2] * yt[2]);
        }
    }
    out
}

/// Second-derivative contraction `Σ_b ∂²(xᵀK(m)y)/∂m_a∂m_b · m̂_b`.
pub fn stiffness_second_derivative(
    mesh: &Mesh,
    local: &LocalStiffness,
    kappa: &[f64],
    x: &NodalField,
    y: &NodalField,
    mhat: &NodalField,
) -> NodalField {
    let mut out = DVector::zeros(mesh.n_nodes());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let s = mhat[tri[0]] + mhat[tri[1]] + mhat[tri[2]];
        if s == 0.0 {
            continue;
        }
        let v = kappa[t] / 9.0 * s * local_form(local.block(t), gather(tri, x), gather(tri, y));
        for &a in tri {
            out[a] += v;
        }
    }
    out
}
