//! Edge-based residual error indicators and the data-resolution and
//! oscillation terms.
//!
//! All fields store *squared* values; subset queries sum squares. Square
//! roots are taken only when reporting. Boundary edges carry no jump terms;
//! the volume contribution of their single adjacent triangle still counts.

use thiserror::Error;

use crate::exec;
use crate::fem::{DiscreteSolution, ElementGeom, FemError};
use crate::mesh::{MarkSet, Mesh};
use crate::problem::{ProblemSpec, Side};
use crate::quadrature::{edge_rule, TriangleRule};

/// Quadrature degree for estimator integrands: squares of degree-4 data.
const ESTIMATOR_QUAD_DEGREE: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimatorError {
    #[error("discrete solution belongs to the other side of the problem")]
    SideMismatch,
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Per-edge squared indicator values with exact subset sums.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    pub side: Side,
    sq: Vec<f64>,
}

impl IndicatorField {
    pub fn from_squares(side: Side, sq: Vec<f64>) -> IndicatorField {
        debug_assert!(sq.iter().all(|&v| v >= 0.0));
        IndicatorField { side, sq }
    }

    pub fn len(&self) -> usize {
        self.sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq.is_empty()
    }

    pub fn value_sq(&self, e: usize) -> f64 {
        self.sq[e]
    }

    pub fn squares(&self) -> &[f64] {
        &self.sq
    }

    pub fn total_sq(&self) -> f64 {
        self.sq.iter().sum()
    }

    pub fn subset_sq(&self, set: &MarkSet) -> f64 {
        set.ids().iter().map(|&e| self.sq[e]).sum()
    }
}

/// Per-triangle squared values (data resolution or oscillation).
#[derive(Debug, Clone)]
pub struct ElementField {
    pub side: Side,
    sq: Vec<f64>,
}

impl ElementField {
    pub fn len(&self) -> usize {
        self.sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq.is_empty()
    }

    pub fn value_sq(&self, t: usize) -> f64 {
        self.sq[t]
    }

    pub fn total_sq(&self) -> f64 {
        self.sq.iter().sum()
    }

    /// Sum over a triangle subset given as a boolean mask.
    pub fn masked_sq(&self, mask: &[bool]) -> f64 {
        self.sq
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum()
    }
}

/// `A : H` for a symmetric matrix and a Hessian `(dxx, dxy, dyy)`.
fn a_colon_h(a: &crate::problem::SymMat2, h: [f64; 3]) -> f64 {
    a.a11 * h[0] + 2.0 * a.a12 * h[1] + a.a22 * h[2]
}

/// Squared L2 norm over a triangle of the strong volume residual
/// `f + div fvec + A : H(u)`.
fn volume_residual_sq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &DiscreteSolution,
    rule: &TriangleRule,
    t: usize,
) -> f64 {
    let geom = ElementGeom::new(mesh, t);
    let data = spec.region(mesh.region(t)).expect("regions validated");
    let div_u = a_colon_h(&data.a, u.hessian(mesh, &geom, t));
    let scalar = data.scalar_load(u.side);
    let div_vec = data.div_vector_load(u.side);
    let mut acc = 0.0;
    for &(xi, eta, w) in &rule.points {
        let [x, y] = geom.map(xi, eta);
        let r = scalar.eval(x, y) + div_vec.eval(x, y) + div_u;
        acc += w * geom.det * r * r;
    }
    acc
}

/// Squared L2 norm over an interior edge of the normal flux jump
/// `[[ (A grad u + fvec) . nu ]]`. Zero on boundary edges.
fn flux_jump_sq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &DiscreteSolution,
    rule: &[(f64, f64)],
    e: usize,
) -> f64 {
    let edge = mesh.edge(e);
    if edge.is_boundary() {
        return 0.0;
    }
    let [va, vb] = edge.vertices;
    let (a, b) = (mesh.vertex(va), mesh.vertex(vb));
    let len = mesh.edge_length(e);
    let nu = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    let [t0, t1] = [edge.tris()[0], edge.tris()[1]];
    let flux = |t: usize, x: [f64; 2]| {
        let geom = ElementGeom::new(mesh, t);
        let data = spec.region(mesh.region(t)).expect("regions validated");
        let [xi, eta] = geom.pull_point(x);
        let grad = u.grad_ref(mesh, &geom, t, xi, eta);
        let ag = data.a.apply(grad);
        let vec = data.vector_load(u.side);
        (ag[0] + vec[0].eval(x[0], x[1])) * nu[0] + (ag[1] + vec[1].eval(x[0], x[1])) * nu[1]
    };
    let mut acc = 0.0;
    for &(s, w) in rule {
        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let jump = flux(t0, x) - flux(t1, x);
        acc += w * len * jump * jump;
    }
    acc
}

fn indicators_with(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &DiscreteSolution,
    side: Side,
    sequential: bool,
) -> Result<IndicatorField, EstimatorError> {
    if u.side != side {
        return Err(EstimatorError::SideMismatch);
    }
    if !u.matches(mesh) {
        return Err(EstimatorError::Fem(FemError::SpaceMismatch));
    }
    let tri_rule = TriangleRule::with_degree(ESTIMATOR_QUAD_DEGREE);
    let e_rule = edge_rule(ESTIMATOR_QUAD_DEGREE);
    let nt = mesh.n_triangles();
    let ne = mesh.n_edges();

    let volume: Vec<f64> = if sequential {
        exec::map_indexed_seq(nt, |t| {
            mesh.area(t) * volume_residual_sq(mesh, spec, u, &tri_rule, t)
        })
    } else {
        exec::map_indexed(nt, |t| {
            mesh.area(t) * volume_residual_sq(mesh, spec, u, &tri_rule, t)
        })
    };
    let jump: Vec<f64> = if sequential {
        exec::map_indexed_seq(ne, |e| {
            mesh.edge_length(e) * flux_jump_sq(mesh, spec, u, &e_rule, e)
        })
    } else {
        exec::map_indexed(ne, |e| {
            mesh.edge_length(e) * flux_jump_sq(mesh, spec, u, &e_rule, e)
        })
    };

    let sq: Vec<f64> = (0..ne)
        .map(|e| {
            let vol: f64 = mesh.edge(e).tris().iter().map(|&t| volume[t]).sum();
            jump[e] + vol
        })
        .collect();
    Ok(IndicatorField::from_squares(side, sq))
}

/// The edge-based residual indicator field for one side:
/// `eta(E)^2 = |E| ||[[(A grad u + fvec) . nu]]||^2_{L2(E)}
///           + sum_{T adjacent to E} |T| ||f + div(A grad u + fvec)||^2_{L2(T)}`.
pub fn edge_indicators(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &DiscreteSolution,
    side: Side,
) -> Result<IndicatorField, EstimatorError> {
    indicators_with(mesh, spec, u, side, false)
}

/// Sequential variant for determinism checks and benchmarks.
pub fn edge_indicators_seq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &DiscreteSolution,
    side: Side,
) -> Result<IndicatorField, EstimatorError> {
    indicators_with(mesh, spec, u, side, true)
}

/// Squared remainder of the L2 projection of the volume datum
/// `f + div fvec` onto polynomials of degree `q` on triangle `t`.
/// `q = -1` means the zero space (remainder = the full norm).
fn volume_projection_remainder_sq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    side: Side,
    rule: &TriangleRule,
    t: usize,
    q: i32,
) -> f64 {
    let geom = ElementGeom::new(mesh, t);
    let data = spec.region(mesh.region(t)).expect("regions validated");
    let scalar = data.scalar_load(side);
    let div_vec = data.div_vector_load(side);
    let area = 0.5 * geom.det;

    let mut norm2 = 0.0;
    let mut m0 = 0.0; // moment against 1
    let mut mx = 0.0; // moment against xi
    let mut my = 0.0; // moment against eta
    for &(xi, eta, w) in &rule.points {
        let [x, y] = geom.map(xi, eta);
        let r = scalar.eval(x, y) + div_vec.eval(x, y);
        let wq = w * geom.det;
        norm2 += wq * r * r;
        m0 += wq * r;
        mx += wq * r * xi;
        my += wq * r * eta;
    }
    match q {
        -1 => norm2,
        0 => (norm2 - m0 * m0 / area).max(0.0),
        _ => {
            // Projection onto {1, xi, eta}: remainder = ||r||^2 - m^T M^{-1} m
            // with M = detJ * reference mass matrix of the basis.
            let d = geom.det;
            let m = [
                [d / 2.0, d / 6.0, d / 6.0],
                [d / 6.0, d / 12.0, d / 24.0],
                [d / 6.0, d / 24.0, d / 12.0],
            ];
            let rhs = [m0, mx, my];
            let sol = solve3(m, rhs);
            let fit = sol[0] * m0 + sol[1] * mx + sol[2] * my;
            (norm2 - fit).max(0.0)
        }
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    // Gaussian elimination with partial pivoting on a 3x3 system.
    for k in 0..3 {
        let piv = (k..3)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..3 {
            let f = a[i][k] / a[k][k];
            for j in k..3 {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut acc = b[k];
        for j in k + 1..3 {
            acc -= a[k][j] * x[j];
        }
        x[k] = acc / a[k][k];
    }
    x
}

/// Squared remainder of the L2 projection of the data jump
/// `[[fvec . nu]]` onto degree `p - 1` polynomials on edge `e`. Zero on
/// boundary edges.
fn edge_projection_remainder_sq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    side: Side,
    rule: &[(f64, f64)],
    e: usize,
    p: usize,
) -> f64 {
    let edge = mesh.edge(e);
    if edge.is_boundary() {
        return 0.0;
    }
    let [va, vb] = edge.vertices;
    let (a, b) = (mesh.vertex(va), mesh.vertex(vb));
    let len = mesh.edge_length(e);
    let nu = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    let [t0, t1] = [edge.tris()[0], edge.tris()[1]];
    let jump_at = |x: [f64; 2]| {
        let v0 = spec
            .region(mesh.region(t0))
            .expect("regions validated")
            .vector_load(side);
        let v1 = spec
            .region(mesh.region(t1))
            .expect("regions validated")
            .vector_load(side);
        (v0[0].eval(x[0], x[1]) - v1[0].eval(x[0], x[1])) * nu[0]
            + (v0[1].eval(x[0], x[1]) - v1[1].eval(x[0], x[1])) * nu[1]
    };
    let mut norm2 = 0.0;
    let mut m0 = 0.0;
    let mut ms = 0.0;
    for &(s, w) in rule {
        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let j = jump_at(x);
        norm2 += w * len * j * j;
        m0 += w * len * j;
        ms += w * len * j * s;
    }
    if p == 1 {
        (norm2 - m0 * m0 / len).max(0.0)
    } else {
        // projection onto {1, s}
        let m11 = len;
        let m12 = len / 2.0;
        let m22 = len / 3.0;
        let det = m11 * m22 - m12 * m12;
        let c0 = (m22 * m0 - m12 * ms) / det;
        let c1 = (-m12 * m0 + m11 * ms) / det;
        (norm2 - (c0 * m0 + c1 * ms)).max(0.0)
    }
}

fn data_terms(
    mesh: &Mesh,
    spec: &ProblemSpec,
    side: Side,
    p: usize,
    volume_q: i32,
) -> ElementField {
    let tri_rule = TriangleRule::with_degree(ESTIMATOR_QUAD_DEGREE);
    let e_rule = edge_rule(ESTIMATOR_QUAD_DEGREE);
    let volume: Vec<f64> = exec::map_indexed(mesh.n_triangles(), |t| {
        volume_projection_remainder_sq(mesh, spec, side, &tri_rule, t, volume_q)
    });
    let edge: Vec<f64> = exec::map_indexed(mesh.n_edges(), |e| {
        edge_projection_remainder_sq(mesh, spec, side, &e_rule, e, p)
    });
    let sq: Vec<f64> = (0..mesh.n_triangles())
        .map(|t| {
            let area = mesh.area(t);
            let edge_sum: f64 = mesh.tri_edges(t).iter().map(|&e| edge[e]).sum();
            area * volume[t] + area.sqrt() * edge_sum
        })
        .collect();
    ElementField { side, sq }
}

/// Data resolution `rho(T)^2`: volume datum projected onto degree `p - 2`
/// (the zero space for p = 1), data jumps onto degree `p - 1` per edge.
/// The edge terms are weighted by `|T|^(1/2)` of the owning triangle.
pub fn data_resolution(mesh: &Mesh, spec: &ProblemSpec, side: Side, p: usize) -> ElementField {
    data_terms(mesh, spec, side, p, p as i32 - 2)
}

/// Classical data oscillation `osc(T)^2`: like [`data_resolution`] but with
/// the volume projection one degree higher (degree `p - 1`).
pub fn oscillation(mesh: &Mesh, spec: &ProblemSpec, side: Side, p: usize) -> ElementField {
    data_terms(mesh, spec, side, p, p as i32 - 1)
}
