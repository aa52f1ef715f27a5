//! Structured triangulation of the unit square.

use std::fmt;
use std::str::FromStr;

use crate::error::{HdsaError, Result};

/// Boundary side of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Γ₁, `x₂ = 0`.
    Bottom,
    /// Γ₂, `x₁ = 1`.
    Right,
    /// Γ₃, `x₂ = 1`.
    Top,
    /// Γ₄, `x₁ = 0`.
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::Bottom => "gamma1",
            Side::Right => "gamma2",
            Side::Top => "gamma3",
            Side::Left => "gamma4",
        };
        f.write_str(s)
    }
}

impl FromStr for Side {
    type Err = HdsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma1" | "bottom" | "1" => Ok(Side::Bottom),
            "gamma2" | "right" | "2" => Ok(Side::Right),
            "gamma3" | "top" | "3" => Ok(Side::Top),
            "gamma4" | "left" | "4" => Ok(Side::Left),
            _ => Err(HdsaError::InvalidSide(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
}

/// Uniform right-triangle mesh of `[0,1]²`.
///
/// Node `(i, j)` sits at `(i/n, j/n)` with index `j (n+1) + i`. Each grid
/// cell is split along its `(i,j)–(i+1,j+1)` diagonal into a lower and an
/// upper triangle, both counter-clockwise.
#[derive(Debug, Clone)]
pub struct Mesh {
    cells_per_side: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

pub fn build_mesh(cells_per_side: usize) -> Result<Mesh> {
    Mesh::new(cells_per_side)
}

impl Mesh {
    pub fn new(cells_per_side: usize) -> Result<Self> {
        if cells_per_side < 2 {
            return Err(HdsaError::InvalidResolution(cells_per_side));
        }
        let n = cells_per_side;
        let idx = |i: usize, j: usize| j * (n + 1) + i;

        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                // Exact endpoints; `i as f64 * h` can miss 1.0 by an ulp.
                nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(i, 0), idx(i + 1, 0)],
                side: Side::Bottom,
            });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(n, j), idx(n, j + 1)],
                side: Side::Right,
            });
        }
        for i in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(i + 1, n), idx(i, n)],
                side: Side::Top,
            });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(0, j + 1), idx(0, j)],
                side: Side::Left,
            });
        }

        Ok(Self {
            cells_per_side,
            nodes,
            triangles,
            boundary_edges,
        })
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    /// Number of nodes, `n_m`.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    /// Signed area of triangle `t`.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Gradients of the three P1 basis functions on triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let two_area = 2.0 * self.signed_area(t);
        [
            [(pb[1] - pc[1]) / two_area, (pc[0] - pb[0]) / two_area],
            [(pc[1] - pa[1]) / two_area, (pa[0] - pc[0]) / two_area],
            [(pa[1] - pb[1]) / two_area, (pb[0] - pa[0]) / two_area],
        ]
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        let l1 = ((pb[0] - p[0]) * (pc[1] - p[1]) - (pc[0] - p[0]) * (pb[1] - p[1])) / det;
        let l2 = ((pc[0] - p[0]) * (pa[1] - p[1]) - (pa[0] - p[0]) * (pc[1] - p[1])) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Nodes lying on `side`, in ascending index order.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.side == side)
            .flat_map(|e| e.nodes)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Nodal interpolant of a function of position.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(&self, f: F) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&p| f(p)))
    }

    /// Sparse interpolation row for a point: `(node, weight)` pairs.
    ///
    /// Points on shared edges go to the lowest-index triangle containing them.
    pub fn interpolation_row(&self, point: [f64; 2]) -> Result<Vec<(usize, f64)>> {
        const TOL: f64 = 1e-12;
        let [x, y] = point;
        if !(x.is_finite() && y.is_finite())
            || x < -TOL
            || y < -TOL
            || x > 1.0 + TOL
            || y > 1.0 + TOL
        {
            return Err(HdsaError::PointOutsideDomain(x, y));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            let w = self.barycentric(t, point);
            if w.iter().all(|&l| l >= -TOL) {
                return Ok(tri.iter().copied().zip(w).collect());
            }
        }
        Err(HdsaError::PointOutsideDomain(x, y))
    }
}
