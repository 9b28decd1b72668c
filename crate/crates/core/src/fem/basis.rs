//! Lagrange shape functions on the reference triangle.
//!
//! Barycentric coordinates `l = [1 - xi - eta, xi, eta]`. Degree-2 nodes sit
//! at the vertices and the edge midpoints; the local edge order is
//! `{0,1}, {1,2}, {2,0}`, matching `Mesh::tri_edges`.

use crate::fem::FemError;

pub const MAX_LOCAL: usize = 6;

const GRAD_L: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
const LOCAL_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

pub fn n_local(p: usize) -> Result<usize, FemError> {
    match p {
        1 => Ok(3),
        2 => Ok(6),
        other => Err(FemError::UnsupportedDegree(other)),
    }
}

/// Shape function values at a reference point.
pub fn values(p: usize, xi: f64, eta: f64, out: &mut [f64; MAX_LOCAL]) {
    let l = [1.0 - xi - eta, xi, eta];
    match p {
        1 => out[..3].copy_from_slice(&l),
        _ => {
            for i in 0..3 {
                out[i] = l[i] * (2.0 * l[i] - 1.0);
            }
            for (k, (i, j)) in LOCAL_EDGES.into_iter().enumerate() {
                out[3 + k] = 4.0 * l[i] * l[j];
            }
        }
    }
}

/// Reference gradients at a reference point.
pub fn gradients(p: usize, xi: f64, eta: f64, out: &mut [[f64; 2]; MAX_LOCAL]) {
    let l = [1.0 - xi - eta, xi, eta];
    match p {
        1 => out[..3].copy_from_slice(&GRAD_L),
        _ => {
            for i in 0..3 {
                let s = 4.0 * l[i] - 1.0;
                out[i] = [s * GRAD_L[i][0], s * GRAD_L[i][1]];
            }
            for (k, (i, j)) in LOCAL_EDGES.into_iter().enumerate() {
                out[3 + k] = [
                    4.0 * (l[j] * GRAD_L[i][0] + l[i] * GRAD_L[j][0]),
                    4.0 * (l[j] * GRAD_L[i][1] + l[i] * GRAD_L[j][1]),
                ];
            }
        }
    }
}

/// Constant reference Hessians `(d_xx, d_xy, d_yy)` of the P2 basis.
/// All P1 Hessians vanish.
pub fn hessians_p2() -> [[f64; 3]; MAX_LOCAL] {
    let mut out = [[0.0; 3]; MAX_LOCAL];
    for i in 0..3 {
        let g = GRAD_L[i];
        out[i] = [4.0 * g[0] * g[0], 4.0 * g[0] * g[1], 4.0 * g[1] * g[1]];
    }
    for (k, (i, j)) in LOCAL_EDGES.into_iter().enumerate() {
        let (gi, gj) = (GRAD_L[i], GRAD_L[j]);
        out[3 + k] = [
            8.0 * gi[0] * gj[0],
            4.0 * (gi[0] * gj[1] + gi[1] * gj[0]),
            8.0 * gi[1] * gj[1],
        ];
    }
    out
}

/// Reference coordinates of the local Lagrange nodes.
pub fn node_coords(p: usize) -> Vec<[f64; 2]> {
    let verts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    if p == 1 {
        verts
    } else {
        let mut out = verts;
        out.extend([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]);
        out
    }
}
