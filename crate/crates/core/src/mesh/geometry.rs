//! Affine P1 geometry of space-time simplices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported space-time dimension (2D space + time).
pub const MAX_DIM: usize = 3;

/// Per-element data for affine P1 elements. Gradient and normal rows are
/// indexed by local node; within a row, entries `0..d` are spatial and entry
/// `d` is the time derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementGeometry {
    pub dim: usize,
    pub measure: f64,
    pub grads: [[f64; MAX_DIM]; MAX_DIM + 1],
    /// Outward unit normal of the facet opposite each local node.
    pub facet_normals: [[f64; MAX_DIM]; MAX_DIM + 1],
    /// Time extent of the element.
    pub h_t: f64,
    /// Largest spatial distance between two nodes of the element.
    pub h_s: f64,
}

impl ElementGeometry {
    pub fn spatial_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn node_count(&self) -> usize {
        self.dim + 1
    }

    /// Spatial part of the gradient of local shape function `a`.
    pub fn grad_x(&self, a: usize) -> &[f64] {
        &self.grads[a][..self.dim - 1]
    }

    /// Time derivative of local shape function `a`.
    pub fn grad_t(&self, a: usize) -> f64 {
        self.grads[a][self.dim - 1]
    }
}

/// Signed measure `det(J) / D!` of a simplex given its node coordinates.
pub fn signed_measure(coords: &[&[f64]]) -> f64 {
    let dim = coords.len() - 1;
    let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
    for (i, row) in jac.iter_mut().enumerate().take(dim) {
        for (k, v) in row.iter_mut().enumerate().take(dim) {
            *v = coords[k + 1][i] - coords[0][i];
        }
    }
    let fact = (1..=dim).product::<usize>() as f64;
    determinant(&jac, dim) / fact
}

fn determinant(m: &[[f64; MAX_DIM]; MAX_DIM], dim: usize) -> f64 {
    match dim {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("unsupported dimension {dim}"),
    }
}

/// Computes the P1 geometry of a simplex. `element` is only used for error
/// reporting.
pub fn element_geometry(element: usize, coords: &[&[f64]]) -> Result<ElementGeometry> {
    let dim = coords.len() - 1;
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidMesh(format!("space-time dimension {dim} not supported")));
    }
    // J[i][k] = x_{k+1,i} - x_{0,i}
    let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
    let mut scale = 1.0;
    for k in 0..dim {
        let mut len2 = 0.0;
        for i in 0..dim {
            let v = coords[k + 1][i] - coords[0][i];
            jac[i][k] = v;
            len2 += v * v;
        }
        scale *= len2.sqrt();
    }
    let det = determinant(&jac, dim);
    if !det.is_finite() || det.abs() <= 1e-13 * scale {
        return Err(Error::DegenerateElement { element });
    }
    // Gradients of barycentric coordinates 1..D are the rows of J^{-1}.
    let inv = inverse(&jac, dim, det);
    let mut grads = [[0.0; MAX_DIM]; MAX_DIM + 1];
    for a in 1..=dim {
        for i in 0..dim {
            grads[a][i] = inv[a - 1][i];
            grads[0][i] -= inv[a - 1][i];
        }
    }
    let mut facet_normals = [[0.0; MAX_DIM]; MAX_DIM + 1];
    for a in 0..=dim {
        let norm = grads[a][..dim].iter().map(|g| g * g).sum::<f64>().sqrt();
        for i in 0..dim {
            facet_normals[a][i] = -grads[a][i] / norm;
        }
    }
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut h_s: f64 = 0.0;
    for (a, xa) in coords.iter().enumerate() {
        t_min = t_min.min(xa[dim - 1]);
        t_max = t_max.max(xa[dim - 1]);
        for xb in &coords[a + 1..] {
            let d2: f64 = (0..dim - 1).map(|i| (xa[i] - xb[i]).powi(2)).sum();
            h_s = h_s.max(d2.sqrt());
        }
    }
    let fact = (1..=dim).product::<usize>() as f64;
    Ok(ElementGeometry { dim, measure: det.abs() / fact, grads, facet_normals, h_t: t_max - t_min, h_s })
}

fn inverse(m: &[[f64; MAX_DIM]; MAX_DIM], dim: usize, det: f64) -> [[f64; MAX_DIM]; MAX_DIM] {
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    match dim {
        2 => {
            inv[0][0] = m[1][1] / det;
            inv[0][1] = -m[0][1] / det;
            inv[1][0] = -m[1][0] / det;
            inv[1][1] = m[0][0] / det;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    // cofactor of m[j][i]
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
                }
            }
        }
        _ => unreachable!(),
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_right_triangle() {
        let c: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let g = element_geometry(0, &c).unwrap();
        assert!((g.measure - 0.5).abs() < 1e-15);
        assert_eq!(g.grad_x(1), &[1.0]);
        assert_eq!(g.grad_t(2), 1.0);
        assert!((g.h_t - 1.0).abs() < 1e-15);
        assert!((g.h_s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_tetrahedron() {
        let c: [&[f64]; 4] = [&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]];
        let g = element_geometry(0, &c).unwrap();
        assert!((g.measure - 1.0 / 6.0).abs() < 1e-15);
        // facet opposite node 0 has normal (1,1,1)/sqrt(3)
        let s = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            assert!((g.facet_normals[0][i] - s).abs() < 1e-15);
        }
        assert!((g.facet_normals[3][2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_sum_to_zero_on_skewed_element() {
        let c: [&[f64]; 4] = [&[0.1, -0.3, 0.2], &[1.7, 0.2, 0.0], &[0.4, 2.1, 0.3], &[0.5, 0.6, 1.9]];
        let g = element_geometry(3, &c).unwrap();
        for i in 0..3 {
            let s: f64 = (0..4).map(|a| g.grads[a][i]).sum();
            assert!(s.abs() < 1e-13);
        }
        // ∇N_a · (x_b - x_0) = δ_ab - δ_a0
        for a in 0..4 {
            for b in 1..4 {
                let dot: f64 = (0..3).map(|i| g.grads[a][i] * (c[b][i] - c[0][i])).sum();
                let expect = if a == b {
                    1.0
                } else if a == 0 {
                    -1.0
                } else {
                    0.0
                };
                assert!((dot - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn degenerate_is_rejected() {
        let c: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]];
        assert!(matches!(element_geometry(7, &c), Err(Error::DegenerateElement { element: 7 })));
    }

    #[test]
    fn signed_measure_flips_with_orientation() {
        let a: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let b: [&[f64]; 3] = [&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]];
        assert!((signed_measure(&a) - 0.5).abs() < 1e-15);
        assert!((signed_measure(&b) + 0.5).abs() < 1e-15);
    }
}
