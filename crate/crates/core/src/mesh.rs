//! Conforming triangle meshes with edge-based newest-vertex bisection.
//!
//! Every triangle is stored as an ordered vertex triple `(a, b, c)` whose
//! reference edge is `{a, b}`. Bisecting the reference edge at its midpoint
//! `m` produces the children `(c, a, m)` and `(b, c, m)`, so each child's
//! reference edge is one of the parent's non-reference edges. The edge table
//! is rebuilt per mesh; edge ids are the index in lexicographic order of the
//! sorted endpoint vertex-id pairs.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

pub type VertexId = usize;
pub type TriId = usize;
pub type EdgeId = usize;

/// Sentinel for "no second triangle" in [`Edge::tris`].
const NO_TRI: usize = usize::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeshError {
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("triangle {0} is degenerate (zero area)")]
    DegenerateTriangle(TriId),
    #[error("vertex index out of bounds in triangle {0}")]
    BadIndex(TriId),
    #[error("edge id {0} is not valid for this mesh")]
    InvalidEdge(EdgeId),
    #[error("tail recursion does not terminate; the initial mesh is not admissible")]
    NonTerminating,
    #[error("refinement closure overflowed; the input mesh lineage is not admissible")]
    RecursionOverflow,
    #[error("mesh file parse error at line {0}: {1}")]
    Parse(usize, String),
}

/// One edge of the triangulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Endpoint vertex ids, sorted ascending.
    pub vertices: [VertexId; 2],
    /// Adjacent triangles; `tris[1] == usize::MAX` on the boundary.
    tris: [TriId; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tris[1] == NO_TRI
    }

    /// Adjacent triangle ids (one or two).
    pub fn tris(&self) -> &[TriId] {
        if self.is_boundary() {
            &self.tris[..1]
        } else {
            &self.tris
        }
    }
}

/// A set of edge ids relative to one specific mesh. Stored sorted and
/// deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkSet {
    ids: Vec<EdgeId>,
}

impl MarkSet {
    pub fn new(mut ids: Vec<EdgeId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        MarkSet { ids }
    }

    pub fn ids(&self) -> &[EdgeId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: EdgeId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn union(&self, other: &MarkSet) -> MarkSet {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        MarkSet::new(ids)
    }
}

impl FromIterator<EdgeId> for MarkSet {
    fn from_iter<I: IntoIterator<Item = EdgeId>>(iter: I) -> Self {
        MarkSet::new(iter.into_iter().collect())
    }
}

/// What happened to each coarse edge under one refinement step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeFate {
    /// The edge survived; this is its id in the fine mesh.
    Survived(EdgeId),
    /// The edge was bisected at `midpoint` into the two fine edges `children`.
    Bisected {
        midpoint: VertexId,
        children: [EdgeId; 2],
    },
}

/// Cross-mesh bookkeeping for a single refinement `coarse -> fine`.
#[derive(Debug, Clone)]
pub struct Lineage {
    /// Coarse parent of each fine triangle.
    pub parent: Vec<TriId>,
    /// Fate of each coarse edge.
    pub edge_fates: Vec<EdgeFate>,
    pub coarse_vertices: usize,
    pub coarse_triangles: usize,
    pub fine_vertices: usize,
    pub fine_triangles: usize,
}

/// A conforming triangulation with per-triangle reference-edge convention.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[VertexId; 3]>,
    regions: Vec<usize>,
    levels: Vec<u32>,
    edges: Vec<Edge>,
    /// Per triangle `(a,b,c)`: edge ids of `{a,b}`, `{b,c}`, `{c,a}`.
    tri_edges: Vec<[EdgeId; 3]>,
}

fn signed_area2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

impl Mesh {
    /// Builds a mesh from raw vertex/triangle data, deriving the edge table.
    ///
    /// Triangles with negative orientation are fixed by swapping the first
    /// two vertices, which preserves the reference edge `{t0, t1}`.
    pub fn build(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[VertexId; 3]>,
        regions: Vec<usize>,
    ) -> Result<Mesh, MeshError> {
        if vertices.len() < 3 {
            return Err(MeshError::NonConforming("fewer than 3 vertices".into()));
        }
        if regions.len() != triangles.len() {
            return Err(MeshError::NonConforming(
                "region list length does not match triangle count".into(),
            ));
        }
        let mut tris = triangles;
        for (t, tri) in tris.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::BadIndex(t));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle(t));
            }
            let s = signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if s < 0.0 {
                tri.swap(0, 1);
            } else if s == 0.0 {
                return Err(MeshError::DegenerateTriangle(t));
            }
        }
        let levels = vec![0; tris.len()];
        let mesh = Mesh::assemble(vertices, tris, regions, levels)?;
        mesh.check_no_hanging_vertices()?;
        Ok(mesh)
    }

    /// Rebuilds the derived edge table; shared by `build` and `refine`.
    fn assemble(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[VertexId; 3]>,
        regions: Vec<usize>,
        levels: Vec<u32>,
    ) -> Result<Mesh, MeshError> {
        let mut pairs: Vec<[VertexId; 2]> = Vec::with_capacity(3 * triangles.len());
        for tri in &triangles {
            for (u, v) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                pairs.push([u.min(v), u.max(v)]);
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let index: HashMap<[VertexId; 2], EdgeId> =
            pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let mut edges: Vec<Edge> = pairs
            .iter()
            .map(|&p| Edge {
                vertices: p,
                tris: [NO_TRI, NO_TRI],
            })
            .collect();
        let mut tri_edges = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for (k, (u, v)) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
                .into_iter()
                .enumerate()
            {
                let e = index[&[u.min(v), u.max(v)]];
                tri_edges[t][k] = e;
                let slot = &mut edges[e].tris;
                if slot[0] == NO_TRI {
                    slot[0] = t;
                } else if slot[1] == NO_TRI {
                    slot[1] = t;
                } else {
                    return Err(MeshError::NonConforming(format!(
                        "edge {:?} is shared by more than two triangles",
                        edges[e].vertices
                    )));
                }
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
            regions,
            levels,
            edges,
            tri_edges,
        })
    }

    /// Rejects vertices that lie strictly inside another triangle's edge.
    /// Quadratic scan; only run on user-supplied meshes, never after refine.
    fn check_no_hanging_vertices(&self) -> Result<(), MeshError> {
        let scale = self
            .vertices
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
            .max(1.0);
        for edge in &self.edges {
            let a = self.vertices[edge.vertices[0]];
            let b = self.vertices[edge.vertices[1]];
            let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
            for (v, &p) in self.vertices.iter().enumerate() {
                if v == edge.vertices[0] || v == edge.vertices[1] {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let dot = (b[0] - a[0]) * (p[0] - a[0]) + (b[1] - a[1]) * (p[1] - a[1]);
                if cross.abs() <= 1e-12 * scale * len2.sqrt()
                    && dot > 1e-12 * len2
                    && dot < (1.0 - 1e-12) * len2
                {
                    return Err(MeshError::NonConforming(format!(
                        "vertex {v} hangs on edge {:?}",
                        edge.vertices
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, v: VertexId) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangle(&self, t: TriId) -> [VertexId; 3] {
        self.triangles[t]
    }

    pub fn triangles(&self) -> &[[VertexId; 3]] {
        &self.triangles
    }

    pub fn region(&self, t: TriId) -> usize {
        self.regions[t]
    }

    pub fn level(&self, t: TriId) -> u32 {
        self.levels[t]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids of triangle `t` in local order `{a,b}, {b,c}, {c,a}`.
    pub fn tri_edges(&self, t: TriId) -> [EdgeId; 3] {
        self.tri_edges[t]
    }

    /// The reference edge of triangle `t`, i.e. the edge `{t0, t1}`.
    pub fn ref_edge(&self, t: TriId) -> EdgeId {
        self.tri_edges[t][0]
    }

    pub fn corners(&self, t: TriId) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: TriId) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * signed_area2(a, b, c)
    }

    pub fn edge_length(&self, e: EdgeId) -> f64 {
        let [u, v] = self.edges[e].vertices;
        let (a, b) = (self.vertices[u], self.vertices[v]);
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    pub fn diameter(&self, t: TriId) -> f64 {
        self.tri_edges[t]
            .iter()
            .map(|&e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// max over triangles of diam(T)^2 / |T|; bounded along NVB sequences.
    pub fn shape_constant(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.diameter(t).powi(2) / self.area(t))
            .fold(0.0, f64::max)
    }

    /// True iff every interior edge is the reference edge of both neighbors
    /// or of neither.
    pub fn is_admissible(&self) -> bool {
        self.edges.iter().enumerate().all(|(e, edge)| {
            if edge.is_boundary() {
                true
            } else {
                let [t0, t1] = edge.tris;
                (self.ref_edge(t0) == e) == (self.ref_edge(t1) == e)
            }
        })
    }

    /// The tail of `edge`: every edge that must be bisected for conformity
    /// when `edge` is bisected. Computed by the recursion
    /// `tail(E) = {E} ∪ tail(ref(T))` over triangles `T ∋ E` with
    /// `ref(T) != E`, run iteratively with cycle detection.
    pub fn tail(&self, edge: EdgeId) -> Result<MarkSet, MeshError> {
        if edge >= self.edges.len() {
            return Err(MeshError::InvalidEdge(edge));
        }
        // DFS with explicit stack; an in-progress revisit means the forced
        // refinement chain loops, which only happens on non-admissible input.
        const UNSEEN: u8 = 0;
        const OPEN: u8 = 1;
        const DONE: u8 = 2;
        let mut state = vec![UNSEEN; self.edges.len()];
        let mut out = Vec::new();
        let mut stack: Vec<(EdgeId, usize)> = vec![(edge, 0)];
        state[edge] = OPEN;
        while let Some(&(e, next)) = stack.last() {
            let dep = self.edges[e]
                .tris()
                .iter()
                .map(|&t| self.ref_edge(t))
                .filter(|&r| r != e)
                .nth(next);
            match dep {
                Some(dep) => {
                    stack.last_mut().unwrap().1 = next + 1;
                    match state[dep] {
                        UNSEEN => {
                            state[dep] = OPEN;
                            stack.push((dep, 0));
                        }
                        OPEN => return Err(MeshError::NonTerminating),
                        _ => {}
                    }
                }
                None => {
                    state[e] = DONE;
                    out.push(e);
                    stack.pop();
                }
            }
        }
        Ok(MarkSet::new(out))
    }

    /// Full closure of a mark set: the coarse edges bisected by
    /// `refine(self, marks)`. Worklist form of the tail union.
    fn closure(&self, marks: &MarkSet) -> Result<Vec<bool>, MeshError> {
        let mut bisect = vec![false; self.edges.len()];
        let mut work: Vec<EdgeId> = Vec::new();
        for &e in marks.ids() {
            if e >= self.edges.len() {
                return Err(MeshError::InvalidEdge(e));
            }
            work.push(e);
        }
        let mut guard = 0usize;
        while let Some(e) = work.pop() {
            guard += 1;
            if guard > 4 * self.edges.len() + 8 {
                return Err(MeshError::RecursionOverflow);
            }
            if bisect[e] {
                continue;
            }
            bisect[e] = true;
            for &t in self.edges[e].tris() {
                let r = self.ref_edge(t);
                if r != e {
                    work.push(r);
                }
            }
        }
        Ok(bisect)
    }

    /// The coarsest NVB refinement in which every edge of `marks` is
    /// bisected once, together with the coarse-to-fine [`Lineage`].
    pub fn refine(&self, marks: &MarkSet) -> Result<(Mesh, Lineage), MeshError> {
        let bisect = self.closure(marks)?;

        let mut vertices = self.vertices.clone();
        let mut midpoint = vec![usize::MAX; self.edges.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            if bisect[e] {
                let a = self.vertices[edge.vertices[0]];
                let b = self.vertices[edge.vertices[1]];
                midpoint[e] = vertices.len();
                vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
        }

        // Edge lookup for the recursive emit: only coarse edges can be
        // bisected, and every bisected edge met during descent is coarse.
        let edge_index: HashMap<[VertexId; 2], EdgeId> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.vertices, i))
            .collect();
        let coarse_edge = |u: VertexId, v: VertexId| -> Option<EdgeId> {
            if u < self.vertices.len() && v < self.vertices.len() {
                edge_index.get(&[u.min(v), u.max(v)]).copied()
            } else {
                None
            }
        };

        let mut triangles = Vec::with_capacity(self.triangles.len() * 2);
        let mut regions = Vec::new();
        let mut levels = Vec::new();
        let mut parent = Vec::new();
        for (t, &tri) in self.triangles.iter().enumerate() {
            // Depth <= 3: the closure guarantees that whenever an edge of
            // the triangle is bisected, so is its reference edge, and the
            // grandchild reference edges are never coarse.
            let mut stack = vec![(tri, self.levels[t])];
            while let Some(([a, b, c], lvl)) = stack.pop() {
                let e = coarse_edge(a, b).filter(|&e| bisect[e]);
                match e {
                    Some(e) => {
                        let m = midpoint[e];
                        stack.push(([b, c, m], lvl + 1));
                        stack.push(([c, a, m], lvl + 1));
                    }
                    None => {
                        triangles.push([a, b, c]);
                        regions.push(self.regions[t]);
                        levels.push(lvl);
                        parent.push(t);
                    }
                }
            }
        }

        let fine = Mesh::assemble(vertices, triangles, regions, levels)?;

        let fine_index: HashMap<[VertexId; 2], EdgeId> = fine
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.vertices, i))
            .collect();
        let mut edge_fates = Vec::with_capacity(self.edges.len());
        for (e, edge) in self.edges.iter().enumerate() {
            let [u, v] = edge.vertices;
            let fate = if bisect[e] {
                let m = midpoint[e];
                let c0 = fine_index[&[u.min(m), u.max(m)]];
                let c1 = fine_index[&[v.min(m), v.max(m)]];
                EdgeFate::Bisected {
                    midpoint: m,
                    children: [c0, c1],
                }
            } else {
                EdgeFate::Survived(fine_index[&[u, v]])
            };
            edge_fates.push(fate);
        }

        let lineage = Lineage {
            parent,
            edge_fates,
            coarse_vertices: self.vertices.len(),
            coarse_triangles: self.triangles.len(),
            fine_vertices: fine.vertices.len(),
            fine_triangles: fine.triangles.len(),
        };
        Ok((fine, lineage))
    }

    /// Refines every edge once (each triangle is replaced by 4 children).
    pub fn refine_uniform(&self) -> Result<(Mesh, Lineage), MeshError> {
        self.refine(&(0..self.n_edges()).collect())
    }

    /// Serializes to the line-based text format (`v x y` / `t i j k region`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            // Shortest round-trip decimal representation (<= 17 significant digits).
            writeln!(s, "v {} {}", v[0], v[1]).unwrap();
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            writeln!(s, "t {} {} {} {}", tri[0], tri[1], tri[2], self.regions[t]).unwrap();
        }
        s
    }

    /// Parses the text format written by [`Mesh::to_text`].
    pub fn from_text(text: &str) -> Result<Mesh, MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut regions = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap();
            let fields: Vec<&str> = it.collect();
            match tag {
                "v" => {
                    if fields.len() != 2 {
                        return Err(MeshError::Parse(ln + 1, "expected `v x y`".into()));
                    }
                    let x = fields[0]
                        .parse::<f64>()
                        .map_err(|e| MeshError::Parse(ln + 1, e.to_string()))?;
                    let y = fields[1]
                        .parse::<f64>()
                        .map_err(|e| MeshError::Parse(ln + 1, e.to_string()))?;
                    vertices.push([x, y]);
                }
                "t" => {
                    if fields.len() != 4 {
                        return Err(MeshError::Parse(ln + 1, "expected `t i j k region`".into()));
                    }
                    let mut idx = [0usize; 4];
                    for (k, f) in fields.iter().enumerate() {
                        idx[k] = f
                            .parse::<usize>()
                            .map_err(|e| MeshError::Parse(ln + 1, e.to_string()))?;
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                    regions.push(idx[3]);
                }
                other => {
                    return Err(MeshError::Parse(ln + 1, format!("unknown tag `{other}`")));
                }
            }
        }
        Mesh::build(vertices, triangles, regions)
    }
}

/// Canonical, coordinate-level form of a triangle set. Two meshes produced
/// by different refinement orders compare equal here exactly when NVB says
/// they are the same triangulation. The reference edge is kept (as an
/// unordered pair) because it is part of the NVB state.
pub fn canonical_triangles(mesh: &Mesh) -> Vec<[[u64; 2]; 3]> {
    let key = |p: [f64; 2]| [p[0].to_bits(), p[1].to_bits()];
    let mut out: Vec<[[u64; 2]; 3]> = mesh
        .triangles()
        .iter()
        .map(|&[a, b, c]| {
            let (pa, pb) = (key(mesh.vertex(a)), key(mesh.vertex(b)));
            let (lo, hi) = if pa <= pb { (pa, pb) } else { (pb, pa) };
            [lo, hi, key(mesh.vertex(c))]
        })
        .collect();
    out.sort_unstable();
    out
}
