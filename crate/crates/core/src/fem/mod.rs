//! Lagrange P1/P2 finite elements: assembly, Dirichlet elimination, sparse
//! solves, energy computations, goal evaluation, and prolongation between
//! nested meshes.

pub mod basis;
pub mod solve;

use thiserror::Error;

use crate::exec;
use crate::mesh::{Lineage, Mesh};
use crate::problem::{ProblemSpec, Side};
use crate::quadrature::TriangleRule;
use basis::MAX_LOCAL;
pub use solve::{CsrMatrix, LdlFactor, Solver};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FemError {
    #[error("unsupported polynomial degree {0}; only 1 and 2 are implemented")]
    UnsupportedDegree(usize),
    #[error("discrete function does not live in the expected space")]
    SpaceMismatch,
    #[error("lineage does not connect the given meshes")]
    LineageMismatch,
    #[error("system matrix is not symmetric positive definite")]
    NotSpd,
    #[error("iterative solver did not reach the residual tolerance")]
    NoConvergence,
}

/// Quadrature degree used for assembly and functionals: exact for products
/// of degree-4 data with the degree-p basis.
pub fn assembly_quad_degree(p: usize) -> usize {
    2 * p + 4
}

/// Lagrange node bookkeeping: vertex nodes first, then (for P2) one node
/// per edge in edge-table order.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub p: usize,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_nodes: usize,
    pub n_free: usize,
    free: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, p: usize) -> Result<DofMap, FemError> {
        basis::n_local(p)?;
        let n_vertices = mesh.n_vertices();
        let n_edges = mesh.n_edges();
        let n_nodes = if p == 1 {
            n_vertices
        } else {
            n_vertices + n_edges
        };
        let mut boundary = vec![false; n_nodes];
        for (e, edge) in mesh.edges().iter().enumerate() {
            if edge.is_boundary() {
                boundary[edge.vertices[0]] = true;
                boundary[edge.vertices[1]] = true;
                if p == 2 {
                    boundary[n_vertices + e] = true;
                }
            }
        }
        let mut free = vec![None; n_nodes];
        let mut n_free = 0;
        for (node, f) in free.iter_mut().enumerate() {
            if !boundary[node] {
                *f = Some(n_free);
                n_free += 1;
            }
        }
        Ok(DofMap {
            p,
            n_vertices,
            n_edges,
            n_nodes,
            n_free,
            free,
        })
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free[node]
    }

    /// Global node ids of the element's local Lagrange nodes.
    pub fn element_nodes(&self, mesh: &Mesh, t: usize) -> ([usize; MAX_LOCAL], usize) {
        let [a, b, c] = mesh.triangle(t);
        let mut nodes = [0usize; MAX_LOCAL];
        nodes[0] = a;
        nodes[1] = b;
        nodes[2] = c;
        if self.p == 1 {
            (nodes, 3)
        } else {
            let e = mesh.tri_edges(t);
            nodes[3] = self.n_vertices + e[0];
            nodes[4] = self.n_vertices + e[1];
            nodes[5] = self.n_vertices + e[2];
            (nodes, 6)
        }
    }

    pub fn node_position(&self, mesh: &Mesh, node: usize) -> [f64; 2] {
        if node < self.n_vertices {
            mesh.vertex(node)
        } else {
            let e = mesh.edge(node - self.n_vertices);
            let a = mesh.vertex(e.vertices[0]);
            let b = mesh.vertex(e.vertices[1]);
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        }
    }
}

/// Affine map geometry of one element.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeom {
    pub origin: [f64; 2],
    /// Columns are the edge vectors `b - a`, `c - a`.
    pub jac: [[f64; 2]; 2],
    pub det: f64,
    inv_t: [[f64; 2]; 2],
}

impl ElementGeom {
    pub fn new(mesh: &Mesh, t: usize) -> ElementGeom {
        let [a, b, c] = mesh.corners(t);
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        ElementGeom {
            origin: a,
            jac,
            det,
            inv_t,
        }
    }

    pub fn map(&self, xi: f64, eta: f64) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi + self.jac[0][1] * eta,
            self.origin[1] + self.jac[1][0] * xi + self.jac[1][1] * eta,
        ]
    }

    /// Physical gradient from a reference gradient.
    pub fn push_grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }

    /// Barycentric-style reference coordinates of a physical point.
    pub fn pull_point(&self, x: [f64; 2]) -> [f64; 2] {
        let dx = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            (self.jac[1][1] * dx[0] - self.jac[0][1] * dx[1]) / self.det,
            (-self.jac[1][0] * dx[0] + self.jac[0][0] * dx[1]) / self.det,
        ]
    }

    /// Physical Hessian `(dxx, dxy, dyy)` from a reference Hessian.
    pub fn push_hessian(&self, h: [f64; 3]) -> [f64; 3] {
        // H_x = J^{-T} H_ref J^{-1}
        let it = self.inv_t;
        let hr = [[h[0], h[1]], [h[1], h[2]]];
        let mut tmp = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                tmp[i][j] = it[i][0] * hr[0][j] + it[i][1] * hr[1][j];
            }
        }
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = tmp[i][0] * it[j][0] + tmp[i][1] * it[j][1];
            }
        }
        [out[0][0], out[0][1], out[1][1]]
    }
}

/// Coefficients of one finite element function over all Lagrange nodes of
/// its mesh; boundary node coefficients are exactly zero.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub degree: usize,
    pub side: Side,
    coeffs: Vec<f64>,
    n_vertices: usize,
    n_edges: usize,
}

impl DiscreteSolution {
    pub fn zero(mesh: &Mesh, p: usize, side: Side) -> Result<DiscreteSolution, FemError> {
        let dofs = DofMap::new(mesh, p)?;
        Ok(DiscreteSolution {
            degree: p,
            side,
            coeffs: vec![0.0; dofs.n_nodes],
            n_vertices: mesh.n_vertices(),
            n_edges: mesh.n_edges(),
        })
    }

    pub fn from_free(
        mesh: &Mesh,
        dofs: &DofMap,
        side: Side,
        free: &[f64],
    ) -> Result<DiscreteSolution, FemError> {
        if free.len() != dofs.n_free {
            return Err(FemError::SpaceMismatch);
        }
        let mut coeffs = vec![0.0; dofs.n_nodes];
        for node in 0..dofs.n_nodes {
            if let Some(k) = dofs.free_index(node) {
                coeffs[node] = free[k];
            }
        }
        Ok(DiscreteSolution {
            degree: dofs.p,
            side,
            coeffs,
            n_vertices: mesh.n_vertices(),
            n_edges: mesh.n_edges(),
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn matches(&self, mesh: &Mesh) -> bool {
        self.n_vertices == mesh.n_vertices() && self.n_edges == mesh.n_edges()
    }

    fn check(&self, mesh: &Mesh) -> Result<(), FemError> {
        if self.matches(mesh) {
            Ok(())
        } else {
            Err(FemError::SpaceMismatch)
        }
    }

    /// Local coefficients on element `t`.
    pub fn element_coeffs(&self, mesh: &Mesh, t: usize) -> ([f64; MAX_LOCAL], usize) {
        let [a, b, c] = mesh.triangle(t);
        let mut out = [0.0; MAX_LOCAL];
        out[0] = self.coeffs[a];
        out[1] = self.coeffs[b];
        out[2] = self.coeffs[c];
        if self.degree == 1 {
            (out, 3)
        } else {
            let e = mesh.tri_edges(t);
            for k in 0..3 {
                out[3 + k] = self.coeffs[self.n_vertices + e[k]];
            }
            (out, 6)
        }
    }

    /// Value of the function at reference coordinates of element `t`.
    pub fn eval_ref(&self, mesh: &Mesh, t: usize, xi: f64, eta: f64) -> f64 {
        let (coef, nl) = self.element_coeffs(mesh, t);
        let mut vals = [0.0; MAX_LOCAL];
        basis::values(self.degree, xi, eta, &mut vals);
        (0..nl).map(|i| coef[i] * vals[i]).sum()
    }

    /// Physical gradient at reference coordinates of element `t`.
    pub fn grad_ref(&self, mesh: &Mesh, geom: &ElementGeom, t: usize, xi: f64, eta: f64) -> [f64; 2] {
        let (coef, nl) = self.element_coeffs(mesh, t);
        let mut grads = [[0.0; 2]; MAX_LOCAL];
        basis::gradients(self.degree, xi, eta, &mut grads);
        let mut g = [0.0; 2];
        for i in 0..nl {
            g[0] += coef[i] * grads[i][0];
            g[1] += coef[i] * grads[i][1];
        }
        geom.push_grad(g)
    }

    /// Constant physical Hessian `(dxx, dxy, dyy)` of the function on
    /// element `t`; zero for P1.
    pub fn hessian(&self, mesh: &Mesh, geom: &ElementGeom, t: usize) -> [f64; 3] {
        if self.degree == 1 {
            return [0.0; 3];
        }
        let (coef, nl) = self.element_coeffs(mesh, t);
        let href = basis::hessians_p2();
        let mut h = [0.0; 3];
        for i in 0..nl {
            for k in 0..3 {
                h[k] += coef[i] * href[i][k];
            }
        }
        geom.push_hessian(h)
    }
}

/// Assembled stiffness (free dofs only) with both right-hand sides.
pub struct LinearSystem {
    pub dofs: DofMap,
    pub matrix: CsrMatrix,
    pub rhs_primal: Vec<f64>,
    pub rhs_dual: Vec<f64>,
}

impl LinearSystem {
    pub fn rhs(&self, side: Side) -> &[f64] {
        match side {
            Side::Primal => &self.rhs_primal,
            Side::Dual => &self.rhs_dual,
        }
    }
}

struct ElementContrib {
    k: [[f64; MAX_LOCAL]; MAX_LOCAL],
    rhs: [[f64; MAX_LOCAL]; 2],
}

/// Basis values and reference gradients tabulated at the quadrature points.
struct QuadTable {
    points: Vec<(f64, f64, f64)>,
    vals: Vec<[f64; MAX_LOCAL]>,
    grads: Vec<[[f64; 2]; MAX_LOCAL]>,
}

impl QuadTable {
    fn new(p: usize, rule: &TriangleRule) -> QuadTable {
        let mut vals = Vec::with_capacity(rule.points.len());
        let mut grads = Vec::with_capacity(rule.points.len());
        for &(xi, eta, _) in &rule.points {
            let mut v = [0.0; MAX_LOCAL];
            let mut g = [[0.0; 2]; MAX_LOCAL];
            basis::values(p, xi, eta, &mut v);
            basis::gradients(p, xi, eta, &mut g);
            vals.push(v);
            grads.push(g);
        }
        QuadTable {
            points: rule.points.clone(),
            vals,
            grads,
        }
    }
}

fn element_contrib(
    mesh: &Mesh,
    spec: &ProblemSpec,
    p: usize,
    table: &QuadTable,
    t: usize,
) -> ElementContrib {
    let nl = basis::n_local(p).expect("degree checked by caller");
    let geom = ElementGeom::new(mesh, t);
    let data = spec.region(mesh.region(t)).expect("regions validated");
    let mut k = [[0.0; MAX_LOCAL]; MAX_LOCAL];
    let mut rhs = [[0.0; MAX_LOCAL]; 2];
    let mut pg = [[0.0; 2]; MAX_LOCAL];
    for (q, &(xi, eta, w)) in table.points.iter().enumerate() {
        let weight = w * geom.det;
        let vals = &table.vals[q];
        let grads = &table.grads[q];
        for i in 0..nl {
            pg[i] = geom.push_grad(grads[i]);
        }
        let x = geom.map(xi, eta);
        for i in 0..nl {
            let agi = data.a.apply(pg[i]);
            // symmetric: fill the upper triangle and mirror below
            for j in i..nl {
                let v = weight * (agi[0] * pg[j][0] + agi[1] * pg[j][1]);
                k[i][j] += v;
            }
        }
        for (s, side) in [Side::Primal, Side::Dual].into_iter().enumerate() {
            let scalar = data.scalar_load(side).eval(x[0], x[1]);
            let vec = data.vector_load(side);
            let vx = vec[0].eval(x[0], x[1]);
            let vy = vec[1].eval(x[0], x[1]);
            for i in 0..nl {
                rhs[s][i] += weight * (scalar * vals[i] - (vx * pg[i][0] + vy * pg[i][1]));
            }
        }
    }
    for i in 0..nl {
        for j in 0..i {
            k[i][j] = k[j][i];
        }
    }
    ElementContrib { k, rhs }
}

fn assemble_with(
    mesh: &Mesh,
    spec: &ProblemSpec,
    p: usize,
    sequential: bool,
) -> Result<LinearSystem, FemError> {
    let nl = basis::n_local(p)?;
    let dofs = DofMap::new(mesh, p)?;
    let rule = TriangleRule::with_degree(assembly_quad_degree(p));
    let table = QuadTable::new(p, &rule);
    let nt = mesh.n_triangles();
    let per_element: Vec<ElementContrib> = if sequential {
        exec::map_indexed_seq(nt, |t| element_contrib(mesh, spec, p, &table, t))
    } else {
        exec::map_indexed(nt, |t| element_contrib(mesh, spec, p, &table, t))
    };

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(nt * nl * nl);
    let mut rhs_primal = vec![0.0; dofs.n_free];
    let mut rhs_dual = vec![0.0; dofs.n_free];
    for (t, contrib) in per_element.iter().enumerate() {
        let (nodes, _) = dofs.element_nodes(mesh, t);
        for i in 0..nl {
            let Some(fi) = dofs.free_index(nodes[i]) else {
                continue;
            };
            rhs_primal[fi] += contrib.rhs[0][i];
            rhs_dual[fi] += contrib.rhs[1][i];
            for j in 0..nl {
                if let Some(fj) = dofs.free_index(nodes[j]) {
                    triplets.push((fi, fj, contrib.k[i][j]));
                }
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(dofs.n_free, triplets);
    Ok(LinearSystem {
        dofs,
        matrix,
        rhs_primal,
        rhs_dual,
    })
}

/// Assembles stiffness and both load vectors over the free dofs. The
/// element loop runs on the rayon pool when the `parallel` feature is on;
/// the result is bitwise identical to [`assemble_system_seq`].
pub fn assemble_system(mesh: &Mesh, spec: &ProblemSpec, p: usize) -> Result<LinearSystem, FemError> {
    assemble_with(mesh, spec, p, false)
}

/// Sequential assembly, kept for determinism checks and benchmarks.
pub fn assemble_system_seq(
    mesh: &Mesh,
    spec: &ProblemSpec,
    p: usize,
) -> Result<LinearSystem, FemError> {
    assemble_with(mesh, spec, p, true)
}

/// Solves one side of an assembled system; free-dof coefficients.
pub fn solve_free(system: &LinearSystem, side: Side) -> Result<Vec<f64>, FemError> {
    let solver = Solver::new(&system.matrix)?;
    solver.solve(&system.matrix, system.rhs(side))
}

/// Assembles and solves the Galerkin problem for one side.
pub fn solve_problem(
    mesh: &Mesh,
    spec: &ProblemSpec,
    p: usize,
    side: Side,
) -> Result<DiscreteSolution, FemError> {
    let system = assemble_system(mesh, spec, p)?;
    let free = solve_free(&system, side)?;
    DiscreteSolution::from_free(mesh, &system.dofs, side, &free)
}

/// Energy inner product `a(v, w) = ∫ A grad v · grad w`.
pub fn energy_inner(
    mesh: &Mesh,
    spec: &ProblemSpec,
    v: &DiscreteSolution,
    w: &DiscreteSolution,
) -> Result<f64, FemError> {
    v.check(mesh)?;
    w.check(mesh)?;
    if v.degree != w.degree {
        return Err(FemError::SpaceMismatch);
    }
    let rule = TriangleRule::with_degree(assembly_quad_degree(v.degree));
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeom::new(mesh, t);
        let a = spec.region(mesh.region(t)).expect("regions validated").a;
        for &(xi, eta, wq) in &rule.points {
            let gv = v.grad_ref(mesh, &geom, t, xi, eta);
            let gw = w.grad_ref(mesh, &geom, t, xi, eta);
            let agv = a.apply(gv);
            acc += wq * geom.det * (agv[0] * gw[0] + agv[1] * gw[1]);
        }
    }
    Ok(acc)
}

pub fn energy_norm(mesh: &Mesh, spec: &ProblemSpec, v: &DiscreteSolution) -> Result<f64, FemError> {
    Ok(energy_inner(mesh, spec, v, v)?.max(0.0).sqrt())
}

/// The load functional of one side applied to a discrete function:
/// `F(v) = ∫ f v - fvec · grad v` (primal) or the same with `(g, gvec)`.
pub fn load_functional(
    mesh: &Mesh,
    spec: &ProblemSpec,
    v: &DiscreteSolution,
    side: Side,
) -> Result<f64, FemError> {
    v.check(mesh)?;
    let rule = TriangleRule::with_degree(assembly_quad_degree(v.degree));
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeom::new(mesh, t);
        let data = spec.region(mesh.region(t)).expect("regions validated");
        let scalar = data.scalar_load(side);
        let vec = data.vector_load(side);
        for &(xi, eta, wq) in &rule.points {
            let x = geom.map(xi, eta);
            let val = v.eval_ref(mesh, t, xi, eta);
            let grad = v.grad_ref(mesh, &geom, t, xi, eta);
            let s = scalar.eval(x[0], x[1]);
            let vx = vec[0].eval(x[0], x[1]);
            let vy = vec[1].eval(x[0], x[1]);
            acc += wq * geom.det * (s * val - (vx * grad[0] + vy * grad[1]));
        }
    }
    Ok(acc)
}

/// The goal functional `G(u) = ∫ g u - gvec · grad u` by exact quadrature.
pub fn evaluate_goal(mesh: &Mesh, spec: &ProblemSpec, u: &DiscreteSolution) -> Result<f64, FemError> {
    load_functional(mesh, spec, u, Side::Dual)
}

/// `1/2 a(v, v) - F(v)` with the load of the requested side.
pub fn dirichlet_energy(
    mesh: &Mesh,
    spec: &ProblemSpec,
    v: &DiscreteSolution,
    side: Side,
) -> Result<f64, FemError> {
    Ok(0.5 * energy_inner(mesh, spec, v, v)? - load_functional(mesh, spec, v, side)?)
}

/// Represents a coarse function exactly on a refinement of its mesh.
///
/// Vertex and surviving-edge coefficients transfer by copy; new midpoint
/// vertices take the coarse edge value (P2) or the endpoint average (P1);
/// the remaining P2 edge nodes are evaluated through the parent element.
pub fn prolongate(
    coarse_mesh: &Mesh,
    coarse: &DiscreteSolution,
    fine_mesh: &Mesh,
    lineage: &Lineage,
) -> Result<DiscreteSolution, FemError> {
    coarse.check(coarse_mesh)?;
    if lineage.coarse_vertices != coarse_mesh.n_vertices()
        || lineage.coarse_triangles != coarse_mesh.n_triangles()
        || lineage.fine_vertices != fine_mesh.n_vertices()
        || lineage.fine_triangles != fine_mesh.n_triangles()
    {
        return Err(FemError::LineageMismatch);
    }
    let p = coarse.degree;
    let fine_dofs = DofMap::new(fine_mesh, p)?;
    let mut coeffs = vec![f64::NAN; fine_dofs.n_nodes];

    for v in 0..coarse_mesh.n_vertices() {
        coeffs[v] = coarse.coeffs[v];
    }
    for (e, fate) in lineage.edge_fates.iter().enumerate() {
        match fate {
            crate::mesh::EdgeFate::Bisected { midpoint, .. } => {
                let [u, v] = coarse_mesh.edge(e).vertices;
                coeffs[*midpoint] = if p == 1 {
                    0.5 * (coarse.coeffs[u] + coarse.coeffs[v])
                } else {
                    coarse.coeffs[coarse_mesh.n_vertices() + e]
                };
            }
            crate::mesh::EdgeFate::Survived(fe) => {
                if p == 2 {
                    coeffs[fine_mesh.n_vertices() + fe] =
                        coarse.coeffs[coarse_mesh.n_vertices() + e];
                }
            }
        }
    }
    if p == 2 {
        // Remaining fine edge nodes: evaluate the parent's quadratic.
        for t in 0..fine_mesh.n_triangles() {
            let parent = lineage.parent[t];
            let geom = ElementGeom::new(coarse_mesh, parent);
            for &fe in &fine_mesh.tri_edges(t) {
                let node = fine_mesh.n_vertices() + fe;
                if coeffs[node].is_nan() {
                    let pos = fine_dofs.node_position(fine_mesh, node);
                    let [xi, eta] = geom.pull_point(pos);
                    coeffs[node] = coarse.eval_ref(coarse_mesh, parent, xi, eta);
                }
            }
        }
    }
    debug_assert!(coeffs.iter().all(|c| c.is_finite()));
    Ok(DiscreteSolution {
        degree: p,
        side: coarse.side,
        coeffs,
        n_vertices: fine_mesh.n_vertices(),
        n_edges: fine_mesh.n_edges(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MarkSet;
    use crate::problem::{builtin_problem, ProblemName, RegionData, ScalarField, SymMat2};
    use crate::problem::Poly2;
    use crate::quadrature::edge_rule;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> (Mesh, ProblemSpec) {
        builtin_problem(ProblemName::SmoothSquare)
    }

    fn uniform_times(mesh: &Mesh, times: usize) -> Mesh {
        let mut m = mesh.clone();
        for _ in 0..times {
            m = m.refine_uniform().unwrap().0;
        }
        m
    }

    /// Mesh consisting of exactly the unit right triangle, plus constant
    /// data; used to probe the local element matrices.
    fn single_right_triangle(f_const: f64) -> (Mesh, ProblemSpec) {
        let mesh = Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![0],
        )
        .unwrap();
        let spec = ProblemSpec::new(vec![RegionData::new(
            SymMat2::identity(),
            ScalarField::constant(f_const),
            [Poly2::zero(), Poly2::zero()],
            ScalarField::constant(f_const),
            [Poly2::zero(), Poly2::zero()],
        )])
        .unwrap();
        (mesh, spec)
    }

    #[test]
    fn local_p1_stiffness_matches_textbook_values() {
        let (mesh, spec) = single_right_triangle(1.0);
        let rule = TriangleRule::with_degree(assembly_quad_degree(1));
        let table = QuadTable::new(1, &rule);
        let c = element_contrib(&mesh, &spec, 1, &table, 0);
        let expect = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (c.k[i][j] - expect[i][j]).abs() < 1e-14,
                    "K[{i}][{j}] = {}",
                    c.k[i][j]
                );
            }
        }
    }

    #[test]
    fn local_p1_load_is_area_thirds() {
        let (mesh, spec) = single_right_triangle(1.0);
        let rule = TriangleRule::with_degree(assembly_quad_degree(1));
        let table = QuadTable::new(1, &rule);
        let c = element_contrib(&mesh, &spec, 1, &table, 0);
        for i in 0..3 {
            assert!((c.rhs[0][i] - 1.0 / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_system_on_two_triangle_square() {
        let (mesh, spec) = unit_square();
        let system = assemble_system(&mesh, &spec, 1).unwrap();
        assert_eq!(system.dofs.n_free, 0);
        let u = solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
        assert!(u.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn unsupported_degree_is_rejected() {
        let (mesh, spec) = unit_square();
        assert!(matches!(
            assemble_system(&mesh, &spec, 3),
            Err(FemError::UnsupportedDegree(3))
        ));
    }

    #[test]
    fn stiffness_is_exactly_symmetric() {
        let (mesh, spec) = builtin_problem(ProblemName::ZShape);
        let mesh = uniform_times(&mesh, 2);
        for p in [1, 2] {
            let system = assemble_system(&mesh, &spec, p).unwrap();
            assert_eq!(system.matrix.asymmetry(), 0.0);
        }
    }

    #[test]
    fn parallel_and_sequential_assembly_are_bitwise_identical() {
        let (mesh, spec) = builtin_problem(ProblemName::GoalSquare);
        let mesh = uniform_times(&mesh, 2);
        for p in [1, 2] {
            let a = assemble_system(&mesh, &spec, p).unwrap();
            let b = assemble_system_seq(&mesh, &spec, p).unwrap();
            assert_eq!(a.matrix, b.matrix);
            assert_eq!(a.rhs_primal, b.rhs_primal);
            assert_eq!(a.rhs_dual, b.rhs_dual);
        }
    }

    #[test]
    fn solve_residual_within_tolerance() {
        let (mesh, spec) = builtin_problem(ProblemName::ZShape);
        let mesh = uniform_times(&mesh, 3);
        for p in [1, 2] {
            let system = assemble_system(&mesh, &spec, p).unwrap();
            let x = solve_free(&system, Side::Primal).unwrap();
            let mut r = vec![0.0; system.dofs.n_free];
            system.matrix.matvec(&x, &mut r);
            let res: f64 = r
                .iter()
                .zip(&system.rhs_primal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let bn: f64 = system.rhs_primal.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res <= 1e-12 * bn, "p={p}: residual {res} vs {bn}");
        }
    }

    /// Energy error against the manufactured solution via high-order
    /// quadrature of `|grad(u - u_h)|^2` with the analytic gradient.
    fn smooth_energy_error(mesh: &Mesh, u: &DiscreteSolution) -> f64 {
        use std::f64::consts::PI;
        let rule = TriangleRule::with_degree(12);
        let mut acc = 0.0;
        for t in 0..mesh.n_triangles() {
            let geom = ElementGeom::new(mesh, t);
            for &(xi, eta, w) in &rule.points {
                let [x, y] = geom.map(xi, eta);
                let gu = [
                    PI * (PI * x).cos() * (PI * y).sin(),
                    PI * (PI * x).sin() * (PI * y).cos(),
                ];
                let gh = u.grad_ref(mesh, &geom, t, xi, eta);
                acc += w * geom.det * ((gu[0] - gh[0]).powi(2) + (gu[1] - gh[1]).powi(2));
            }
        }
        acc.sqrt()
    }

    #[test]
    fn manufactured_solution_converges_at_rate_h() {
        let (mesh0, spec) = unit_square();
        let mut errors = Vec::new();
        let mut mesh = mesh0;
        for _ in 0..5 {
            mesh = mesh.refine_uniform().unwrap().0;
            let u = solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
            errors.push(smooth_energy_error(&mesh, &u));
        }
        for w in errors.windows(2).skip(1) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() < 0.2,
                "energy error ratio {ratio} should be near 2"
            );
        }
    }

    #[test]
    fn manufactured_solution_converges_at_rate_h2_for_p2() {
        let (mesh0, spec) = unit_square();
        let mut errors = Vec::new();
        let mut mesh = mesh0;
        for _ in 0..4 {
            mesh = mesh.refine_uniform().unwrap().0;
            let u = solve_problem(&mesh, &spec, 2, Side::Primal).unwrap();
            errors.push(smooth_energy_error(&mesh, &u));
        }
        for w in errors.windows(2).skip(1) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 4.0).abs() < 0.5,
                "energy error ratio {ratio} should be near 4"
            );
        }
    }

    #[test]
    fn energy_inner_is_spd_and_bilinear() {
        let (mesh, spec) = builtin_problem(ProblemName::ZShape);
        let mesh = uniform_times(&mesh, 2);
        let u = solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
        let a_uu = energy_inner(&mesh, &spec, &u, &u).unwrap();
        assert!(a_uu > 0.0);
        let mut two_u = u.clone();
        for c in two_u.coeffs_mut() {
            *c *= 2.0;
        }
        let a_2u_u = energy_inner(&mesh, &spec, &two_u, &u).unwrap();
        assert!((a_2u_u - 2.0 * a_uu).abs() <= 1e-14 * a_uu.abs() * 2.0 + 1e-300);
        let zero = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        assert_eq!(energy_inner(&mesh, &spec, &zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn hat_function_energy_matches_stiffness_diagonal() {
        let (mesh, spec) = unit_square();
        let mesh = uniform_times(&mesh, 2);
        let system = assemble_system(&mesh, &spec, 1).unwrap();
        // first interior vertex
        let node = (0..mesh.n_vertices())
            .find(|&v| system.dofs.free_index(v).is_some())
            .unwrap();
        let fi = system.dofs.free_index(node).unwrap();
        let mut hat = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        hat.coeffs_mut()[node] = 1.0;
        let a_vv = energy_inner(&mesh, &spec, &hat, &hat).unwrap();
        let (cols, vals) = system.matrix.row(fi);
        let diag = cols
            .iter()
            .position(|&c| c == fi)
            .map(|k| vals[k])
            .unwrap();
        assert!((a_vv - diag).abs() < 1e-13 * diag.abs());
    }

    #[test]
    fn prolongation_preserves_the_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (mesh0, spec) = builtin_problem(ProblemName::GoalSquare);
        for p in [1usize, 2] {
            let mut mesh = uniform_times(&mesh0, 1);
            let mut u = solve_problem(&mesh, &spec, p, Side::Primal).unwrap();
            for _ in 0..3 {
                let n = mesh.n_edges();
                let marks: MarkSet =
                    (0..rng.gen_range(2..8)).map(|_| rng.gen_range(0..n)).collect();
                let (fine, lineage) = mesh.refine(&marks).unwrap();
                let uf = prolongate(&mesh, &u, &fine, &lineage).unwrap();
                let coarse_norm = energy_norm(&mesh, &spec, &u).unwrap();
                let fine_norm = energy_norm(&fine, &spec, &uf).unwrap();
                assert!(
                    (coarse_norm - fine_norm).abs() <= 1e-12 * coarse_norm.max(1e-30),
                    "p={p}: prolongation changed the energy norm"
                );
                // point evaluation agrees at fine Lagrange nodes
                let fine_dofs = DofMap::new(&fine, p).unwrap();
                for t in 0..fine.n_triangles() {
                    let parent = lineage.parent[t];
                    let geom = ElementGeom::new(&mesh, parent);
                    let (nodes, nl) = fine_dofs.element_nodes(&fine, t);
                    for &node in &nodes[..nl] {
                        let pos = fine_dofs.node_position(&fine, node);
                        let [xi, eta] = geom.pull_point(pos);
                        let coarse_val = u.eval_ref(&mesh, parent, xi, eta);
                        assert!((coarse_val - uf.coeffs()[node]).abs() < 1e-11);
                    }
                }
                mesh = fine;
                u = solve_problem(&mesh, &spec, p, Side::Primal).unwrap();
            }
        }
    }

    #[test]
    fn p1_midpoint_prolongation_is_endpoint_average() {
        let (mesh, _) = unit_square();
        let mut hat = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        hat.coeffs_mut()[0] = 1.0;
        let (fine, lineage) = mesh.refine(&MarkSet::new(vec![0])).unwrap();
        let fhat = prolongate(&mesh, &hat, &fine, &lineage).unwrap();
        for (e, fate) in lineage.edge_fates.iter().enumerate() {
            if let crate::mesh::EdgeFate::Bisected { midpoint, .. } = fate {
                let [u, v] = mesh.edge(e).vertices;
                let avg = 0.5 * (hat.coeffs()[u] + hat.coeffs()[v]);
                assert_eq!(fhat.coeffs()[*midpoint], avg);
            }
        }
    }

    #[test]
    fn zero_prolongates_to_zero() {
        let (mesh, _) = unit_square();
        let zero = DiscreteSolution::zero(&mesh, 2, Side::Primal).unwrap();
        let (fine, lineage) = mesh.refine_uniform().unwrap();
        let z = prolongate(&mesh, &zero, &fine, &lineage).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn lineage_mismatch_is_detected() {
        let (mesh, _) = unit_square();
        let u = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        let (f1, _l1) = mesh.refine(&MarkSet::new(vec![0])).unwrap();
        let (f2, l2) = f1.refine(&MarkSet::new(vec![0])).unwrap();
        assert!(matches!(
            prolongate(&mesh, &u, &f2, &l2),
            Err(FemError::LineageMismatch)
        ));
    }

    #[test]
    fn galerkin_orthogonality_holds_after_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let (mesh0, spec) = builtin_problem(ProblemName::ZShape);
        let mesh = uniform_times(&mesh0, 2);
        for p in [1, 2] {
            let u_coarse = solve_problem(&mesh, &spec, p, Side::Primal).unwrap();
            let n = mesh.n_edges();
            let marks: MarkSet = (0..6).map(|_| rng.gen_range(0..n)).collect();
            let (fine, lineage) = mesh.refine(&marks).unwrap();
            let u_fine = solve_problem(&fine, &spec, p, Side::Primal).unwrap();
            let u_coarse_on_fine = prolongate(&mesh, &u_coarse, &fine, &lineage).unwrap();

            let mut diff = u_fine.clone();
            for (d, c) in diff.coeffs_mut().iter_mut().zip(u_coarse_on_fine.coeffs()) {
                *d -= c;
            }
            let diff_norm = energy_norm(&fine, &spec, &diff).unwrap();
            // random coarse test functions, prolonged
            let dofs = DofMap::new(&mesh, p).unwrap();
            for _ in 0..5 {
                let mut v = DiscreteSolution::zero(&mesh, p, Side::Primal).unwrap();
                for node in 0..dofs.n_nodes {
                    if dofs.free_index(node).is_some() {
                        v.coeffs_mut()[node] = rng.gen_range(-1.0..1.0);
                    }
                }
                let v_fine = prolongate(&mesh, &v, &fine, &lineage).unwrap();
                let v_norm = energy_norm(&fine, &spec, &v_fine).unwrap();
                let ortho = energy_inner(&fine, &spec, &diff, &v_fine).unwrap();
                assert!(
                    ortho.abs() <= 1e-10 * diff_norm * v_norm + 1e-13,
                    "p={p}: galerkin orthogonality violated: {ortho}"
                );
            }
        }
    }

    #[test]
    fn dirichlet_energy_minimized_by_galerkin_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mesh0, spec) = builtin_problem(ProblemName::ZShape);
        let mesh = uniform_times(&mesh0, 2);
        let u = solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
        let zero = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        assert_eq!(dirichlet_energy(&mesh, &spec, &zero, Side::Primal).unwrap(), 0.0);
        let e_u = dirichlet_energy(&mesh, &spec, &u, Side::Primal).unwrap();
        let dofs = DofMap::new(&mesh, 1).unwrap();
        for _ in 0..20 {
            let mut w = u.clone();
            for node in 0..dofs.n_nodes {
                if dofs.free_index(node).is_some() {
                    w.coeffs_mut()[node] += rng.gen_range(-0.05..0.05);
                }
            }
            let e_w = dirichlet_energy(&mesh, &spec, &w, Side::Primal).unwrap();
            assert!(e_u <= e_w + 1e-12);
        }
    }

    #[test]
    fn energy_difference_identity_across_refinement() {
        // E(coarse) - E(fine) = 1/2 |u_fine - u_coarse|^2 for the Dirichlet
        // energies of the Galerkin solutions (Galerkin orthogonality).
        let (mesh0, spec) = builtin_problem(ProblemName::GoalSquare);
        let mesh = uniform_times(&mesh0, 1);
        for p in [1, 2] {
            let u_h = solve_problem(&mesh, &spec, p, Side::Primal).unwrap();
            let (fine, lineage) = mesh.refine_uniform().unwrap();
            let u_f = solve_problem(&fine, &spec, p, Side::Primal).unwrap();
            let e_coarse = dirichlet_energy(&mesh, &spec, &u_h, Side::Primal).unwrap();
            let e_fine = dirichlet_energy(&fine, &spec, &u_f, Side::Primal).unwrap();
            let u_h_f = prolongate(&mesh, &u_h, &fine, &lineage).unwrap();
            let mut diff = u_f.clone();
            for (d, c) in diff.coeffs_mut().iter_mut().zip(u_h_f.coeffs()) {
                *d -= c;
            }
            let half_norm2 = 0.5 * energy_inner(&fine, &spec, &diff, &diff).unwrap();
            let lhs = e_coarse - e_fine;
            assert!(
                (lhs - half_norm2).abs() <= 1e-10 * half_norm2.abs().max(1e-12),
                "p={p}: {lhs} vs {half_norm2}"
            );
        }
    }

    #[test]
    fn goal_of_zero_is_zero_and_formal_linear_gives_area() {
        let (mesh, spec) = builtin_problem(ProblemName::GoalSquare);
        let zero = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        assert_eq!(evaluate_goal(&mesh, &spec, &zero).unwrap(), 0.0);
        // u = x1 interpolated exactly (ignoring boundary conditions):
        // G(u) = -∫_{T_G} du/dx1 = -|T_G| = -1/8.
        let dofs = DofMap::new(&mesh, 1).unwrap();
        let mut u = DiscreteSolution::zero(&mesh, 1, Side::Primal).unwrap();
        for node in 0..dofs.n_nodes {
            u.coeffs_mut()[node] = dofs.node_position(&mesh, node)[0];
        }
        let g = evaluate_goal(&mesh, &spec, &u).unwrap();
        assert!((g - (-0.125)).abs() < 1e-14, "G = {g}");
    }

    #[test]
    fn goal_matches_elementwise_gradient_sum_for_p1() {
        // For P1 the gradient is constant per triangle, so
        // G(u) = -sum over T_G triangles of |T| du/dx1.
        let (mesh0, spec) = builtin_problem(ProblemName::GoalSquare);
        let mesh = uniform_times(&mesh0, 2);
        let u = solve_problem(&mesh, &spec, 1, Side::Primal).unwrap();
        let g = evaluate_goal(&mesh, &spec, &u).unwrap();
        let mut oracle = 0.0;
        for t in 0..mesh.n_triangles() {
            let gvec = &spec.region(mesh.region(t)).unwrap().gvec;
            if gvec[0].is_zero() && gvec[1].is_zero() {
                continue;
            }
            let geom = ElementGeom::new(&mesh, t);
            let grad = u.grad_ref(&mesh, &geom, t, 1.0 / 3.0, 1.0 / 3.0);
            oracle -= mesh.area(t) * grad[0];
        }
        assert!((g - oracle).abs() <= 1e-12 * oracle.abs().max(1e-12));
    }

    #[test]
    fn quadrature_edge_rule_degree_is_sufficient() {
        // The estimator squares degree-4 data on edges; degree 8 must be exact.
        let rule = edge_rule(8);
        let num: f64 = rule.iter().map(|&(x, w)| w * x.powi(8)).sum();
        assert!((num - 1.0 / 9.0).abs() < 1e-14);
    }
}
