//! Region-wise PDE data and the built-in benchmark problems.
//!
//! Data (diffusion matrix `A`, scalar loads `f`, `g`, vector loads `fvec`,
//! `gvec`) are constant or polynomial per *region*, where a region is one
//! element of the initial mesh. Data discontinuities therefore lie on
//! initial-mesh edges by construction.

use std::fmt::Write as _;

use thiserror::Error;

use crate::mesh::{Mesh, MeshError};

pub const MAX_DATA_DEGREE: usize = 4;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem name `{0}`")]
    UnknownName(String),
    #[error("unknown region id {0}")]
    UnknownRegion(usize),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error("problem file parse error at line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Dense bivariate polynomial in total-degree order:
/// `1, x, y, x^2, xy, y^2, x^3, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    coeffs: Vec<f64>,
}

fn tri_len(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

impl Poly2 {
    pub fn new(coeffs: Vec<f64>) -> Result<Poly2, ProblemError> {
        let ok = (0..=MAX_DATA_DEGREE).any(|d| coeffs.len() == tri_len(d));
        if !ok {
            return Err(ProblemError::InvalidData(format!(
                "polynomial coefficient count {} does not match a degree <= {}",
                coeffs.len(),
                MAX_DATA_DEGREE
            )));
        }
        Ok(Poly2 { coeffs })
    }

    pub fn zero() -> Poly2 {
        Poly2 { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Poly2 {
        Poly2 { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        (0..=MAX_DATA_DEGREE)
            .find(|&d| self.coeffs.len() == tri_len(d))
            .expect("validated at construction")
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        let mut idx = 0;
        let mut k: i32 = 0;
        while idx < self.coeffs.len() {
            for j in 0..=k {
                acc += self.coeffs[idx] * x.powi(k - j) * y.powi(j);
                idx += 1;
            }
            k += 1;
        }
        acc
    }

    /// Coefficient-level partial derivative; exact.
    pub fn derivative(&self, wrt_x: bool) -> Poly2 {
        let d = self.degree();
        if d == 0 {
            return Poly2::zero();
        }
        let mut out = vec![0.0; tri_len(d - 1)];
        let mut idx = 0;
        for k in 0..=d {
            for j in 0..=k {
                let i = k - j; // term x^i y^j
                let c = self.coeffs[idx];
                idx += 1;
                if c == 0.0 {
                    continue;
                }
                if wrt_x && i > 0 {
                    let (ni, nj) = (i - 1, j);
                    out[(ni + nj) * (ni + nj + 1) / 2 + nj] += i as f64 * c;
                } else if !wrt_x && j > 0 {
                    let (ni, nj) = (i, j - 1);
                    out[(ni + nj) * (ni + nj + 1) / 2 + nj] += j as f64 * c;
                }
            }
        }
        Poly2 { coeffs: out }
    }

    pub fn add(&self, other: &Poly2) -> Poly2 {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, &c) in self.coeffs.iter().enumerate() {
            out[i] += c;
        }
        for (i, &c) in other.coeffs.iter().enumerate() {
            out[i] += c;
        }
        Poly2 { coeffs: out }
    }

    fn approx_eq(&self, other: &Poly2, tol: f64) -> bool {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |p: &Poly2, i: usize| p.coeffs.get(i).copied().unwrap_or(0.0);
        let scale = (0..n)
            .map(|i| get(self, i).abs().max(get(other, i).abs()))
            .fold(0.0f64, f64::max)
            .max(1.0);
        (0..n).all(|i| (get(self, i) - get(other, i)).abs() <= tol * scale)
    }
}

/// Scalar load field per region. The sine product exists for the
/// manufactured smooth benchmark; all other data are polynomial.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Poly(Poly2),
    /// `amp * sin(pi x) * sin(pi y)`
    SinSin { amp: f64 },
}

impl ScalarField {
    pub fn zero() -> ScalarField {
        ScalarField::Poly(Poly2::zero())
    }

    pub fn constant(c: f64) -> ScalarField {
        ScalarField::Poly(Poly2::constant(c))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarField::Poly(p) => p.eval(x, y),
            ScalarField::SinSin { amp } => {
                amp * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Poly(p) => p.is_zero(),
            ScalarField::SinSin { amp } => *amp == 0.0,
        }
    }
}

/// Symmetric positive definite 2x2 diffusion matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMat2 {
    pub fn identity() -> SymMat2 {
        SymMat2 {
            a11: 1.0,
            a12: 0.0,
            a22: 1.0,
        }
    }

    pub fn is_spd(&self) -> bool {
        self.a11 > 0.0 && self.a11 * self.a22 - self.a12 * self.a12 > 0.0
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }
}

/// PDE data attached to one region (= one initial-mesh element).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionData {
    pub a: SymMat2,
    pub f: ScalarField,
    pub fvec: [Poly2; 2],
    pub div_fvec: Poly2,
    pub g: ScalarField,
    pub gvec: [Poly2; 2],
    pub div_gvec: Poly2,
}

fn divergence(v: &[Poly2; 2]) -> Poly2 {
    v[0].derivative(true).add(&v[1].derivative(false))
}

impl RegionData {
    /// Builds region data with the divergences derived symbolically from
    /// the vector fields.
    pub fn new(
        a: SymMat2,
        f: ScalarField,
        fvec: [Poly2; 2],
        g: ScalarField,
        gvec: [Poly2; 2],
    ) -> RegionData {
        let div_fvec = divergence(&fvec);
        let div_gvec = divergence(&gvec);
        RegionData {
            a,
            f,
            fvec,
            div_fvec,
            g,
            gvec,
            div_gvec,
        }
    }
}

/// Region-wise problem data for one initial mesh.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    regions: Vec<RegionData>,
}

impl ProblemSpec {
    pub fn new(regions: Vec<RegionData>) -> Result<ProblemSpec, ProblemError> {
        if regions.is_empty() {
            return Err(ProblemError::InvalidData("no regions".into()));
        }
        for (i, r) in regions.iter().enumerate() {
            if !r.a.is_spd() {
                return Err(ProblemError::InvalidData(format!(
                    "region {i}: diffusion matrix is not symmetric positive definite"
                )));
            }
            // Supplied divergences must match the coefficient-level
            // derivatives of the vector fields exactly.
            if !r.div_fvec.approx_eq(&divergence(&r.fvec), 1e-14) {
                return Err(ProblemError::InvalidData(format!(
                    "region {i}: div_fvec does not match the divergence of fvec"
                )));
            }
            if !r.div_gvec.approx_eq(&divergence(&r.gvec), 1e-14) {
                return Err(ProblemError::InvalidData(format!(
                    "region {i}: div_gvec does not match the divergence of gvec"
                )));
            }
        }
        Ok(ProblemSpec { regions })
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region(&self, id: usize) -> Result<&RegionData, ProblemError> {
        self.regions.get(id).ok_or(ProblemError::UnknownRegion(id))
    }

    /// True when the dual data coincide with the primal data, so one solve
    /// serves both sides.
    pub fn dual_is_primal(&self) -> bool {
        self.regions
            .iter()
            .all(|r| r.g == r.f && r.gvec == r.fvec)
    }
}

/// Which side of the problem a quantity belongs to. The dual problem shares
/// the bilinear form and replaces the load data `(f, fvec)` by `(g, gvec)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Primal,
    Dual,
}

impl RegionData {
    pub fn scalar_load(&self, side: Side) -> &ScalarField {
        match side {
            Side::Primal => &self.f,
            Side::Dual => &self.g,
        }
    }

    pub fn vector_load(&self, side: Side) -> &[Poly2; 2] {
        match side {
            Side::Primal => &self.fvec,
            Side::Dual => &self.gvec,
        }
    }

    pub fn div_vector_load(&self, side: Side) -> &Poly2 {
        match side {
            Side::Primal => &self.div_fvec,
            Side::Dual => &self.div_gvec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldId {
    A,
    F,
    FVec,
    DivFVec,
    G,
    GVec,
    DivGVec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Scalar(f64),
    Vector([f64; 2]),
    Matrix(SymMat2),
}

/// Exact evaluation of one data field of a region at a point.
pub fn eval_data(
    spec: &ProblemSpec,
    region: usize,
    point: [f64; 2],
    field: FieldId,
) -> Result<FieldValue, ProblemError> {
    let r = spec.region(region)?;
    let [x, y] = point;
    Ok(match field {
        FieldId::A => FieldValue::Matrix(r.a),
        FieldId::F => FieldValue::Scalar(r.f.eval(x, y)),
        FieldId::FVec => FieldValue::Vector([r.fvec[0].eval(x, y), r.fvec[1].eval(x, y)]),
        FieldId::DivFVec => FieldValue::Scalar(r.div_fvec.eval(x, y)),
        FieldId::G => FieldValue::Scalar(r.g.eval(x, y)),
        FieldId::GVec => FieldValue::Vector([r.gvec[0].eval(x, y), r.gvec[1].eval(x, y)]),
        FieldId::DivGVec => FieldValue::Scalar(r.div_gvec.eval(x, y)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    ZShape,
    GoalSquare,
    SmoothSquare,
}

impl std::str::FromStr for ProblemName {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<ProblemName, ProblemError> {
        match s {
            "zshape" => Ok(ProblemName::ZShape),
            "goal_square" => Ok(ProblemName::GoalSquare),
            "smooth_square" => Ok(ProblemName::SmoothSquare),
            other => Err(ProblemError::UnknownName(other.into())),
        }
    }
}

impl std::fmt::Display for ProblemName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProblemName::ZShape => "zshape",
            ProblemName::GoalSquare => "goal_square",
            ProblemName::SmoothSquare => "smooth_square",
        };
        f.write_str(s)
    }
}

/// Returns the initial mesh and data of a built-in benchmark problem. All
/// initial meshes are admissible.
pub fn builtin_problem(name: ProblemName) -> (Mesh, ProblemSpec) {
    match name {
        ProblemName::ZShape => zshape(),
        ProblemName::GoalSquare => goal_square(),
        ProblemName::SmoothSquare => smooth_square(),
    }
}

/// `-div(A grad u) = 1` on the Z-shaped domain `(-1,1)^2` minus the wedge
/// `conv{(0,0), (-1,0), (-1,-1)}`, homogeneous Dirichlet boundary.
///
/// The initial mesh fans 7 right isosceles triangles around the re-entrant
/// corner at the origin; reference edges are the origin-to-corner
/// hypotenuses, which makes the mesh admissible. The dual data equal the
/// primal data so AFEM and GOAFEM share one code path.
fn zshape() -> (Mesh, ProblemSpec) {
    let vertices = vec![
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [-1.0, 1.0],
        [-1.0, 0.0],
        [-1.0, -1.0],
        [0.0, -1.0],
        [1.0, -1.0],
    ];
    let triangles = vec![
        [2, 0, 1],
        [0, 2, 3],
        [4, 0, 3],
        [0, 4, 5],
        [0, 6, 7],
        [8, 0, 7],
        [0, 8, 1],
    ];
    let regions = (0..triangles.len()).collect::<Vec<_>>();
    let mesh = Mesh::build(vertices, triangles, regions).expect("builtin mesh is valid");
    let one = || ScalarField::constant(1.0);
    let zero_vec = || [Poly2::zero(), Poly2::zero()];
    let data: Vec<RegionData> = (0..mesh.n_triangles())
        .map(|_| RegionData::new(SymMat2::identity(), one(), zero_vec(), one(), zero_vec()))
        .collect();
    (mesh, ProblemSpec::new(data).expect("builtin data is valid"))
}

/// Goal-oriented benchmark on the unit square: `-Δu = div fvec` with
/// `fvec = (1,0)` on `T_F = {x1 + x2 <= 1/2}`, goal data `gvec = (1,0)` on
/// `T_G = {x1 + x2 >= 3/2}`. The criss-cross initial mesh resolves both
/// region boundaries; reference edges are the cell sides.
fn goal_square() -> (Mesh, ProblemSpec) {
    let vertices = vec![
        [0.0, 0.0],
        [0.5, 0.0],
        [1.0, 0.0],
        [0.0, 0.5],
        [0.5, 0.5],
        [1.0, 0.5],
        [0.0, 1.0],
        [0.5, 1.0],
        [1.0, 1.0],
        [0.25, 0.25],
        [0.75, 0.25],
        [0.25, 0.75],
        [0.75, 0.75],
    ];
    // Four criss-cross cells, each fanned counterclockwise around its center.
    let cells: [([usize; 4], usize); 4] = [
        ([0, 1, 4, 3], 9),
        ([1, 2, 5, 4], 10),
        ([3, 4, 7, 6], 11),
        ([4, 5, 8, 7], 12),
    ];
    let mut triangles = Vec::with_capacity(16);
    for (corners, center) in cells {
        for k in 0..4 {
            triangles.push([corners[k], corners[(k + 1) % 4], center]);
        }
    }
    let regions = (0..triangles.len()).collect::<Vec<_>>();
    let mesh = Mesh::build(vertices, triangles, regions).expect("builtin mesh is valid");

    let in_tf = |t: usize| {
        let c = mesh.corners(t);
        c.iter().all(|p| p[0] + p[1] <= 0.5 + 1e-12)
    };
    let in_tg = |t: usize| {
        let c = mesh.corners(t);
        c.iter().all(|p| p[0] + p[1] >= 1.5 - 1e-12)
    };
    let unit_x = || [Poly2::constant(1.0), Poly2::zero()];
    let zero_vec = || [Poly2::zero(), Poly2::zero()];
    let data: Vec<RegionData> = (0..mesh.n_triangles())
        .map(|t| {
            RegionData::new(
                SymMat2::identity(),
                ScalarField::zero(),
                if in_tf(t) { unit_x() } else { zero_vec() },
                ScalarField::zero(),
                if in_tg(t) { unit_x() } else { zero_vec() },
            )
        })
        .collect();
    (mesh, ProblemSpec::new(data).expect("builtin data is valid"))
}

/// Manufactured smooth problem on the unit square with exact solution
/// `u = sin(pi x) sin(pi y)` and load `f = 2 pi^2 sin(pi x) sin(pi y)`.
/// The sine load is the one non-polynomial datum in the crate; it is
/// integrated with the same fixed rule, which is inexact but of high order.
fn smooth_square() -> (Mesh, ProblemSpec) {
    let mesh = Mesh::build(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 2, 1], [2, 0, 3]],
        vec![0, 1],
    )
    .expect("builtin mesh is valid");
    let amp = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
    let load = || ScalarField::SinSin { amp };
    let zero_vec = || [Poly2::zero(), Poly2::zero()];
    let data: Vec<RegionData> = (0..2)
        .map(|_| RegionData::new(SymMat2::identity(), load(), zero_vec(), load(), zero_vec()))
        .collect();
    (mesh, ProblemSpec::new(data).expect("builtin data is valid"))
}

/// Serializes a problem spec to the region-block text format.
pub fn write_problem(spec: &ProblemSpec) -> String {
    let fmt_poly = |p: &Poly2| {
        p.coeffs()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    for (i, r) in spec.regions.iter().enumerate() {
        writeln!(s, "region {i}").unwrap();
        writeln!(s, "A {} {} {}", r.a.a11, r.a.a12, r.a.a22).unwrap();
        match &r.f {
            ScalarField::Poly(p) => writeln!(s, "f poly {}", fmt_poly(p)).unwrap(),
            ScalarField::SinSin { amp } => writeln!(s, "f sin {amp}").unwrap(),
        }
        writeln!(s, "fvec {} ; {}", fmt_poly(&r.fvec[0]), fmt_poly(&r.fvec[1])).unwrap();
        match &r.g {
            ScalarField::Poly(p) => writeln!(s, "g poly {}", fmt_poly(p)).unwrap(),
            ScalarField::SinSin { amp } => writeln!(s, "g sin {amp}").unwrap(),
        }
        writeln!(s, "gvec {} ; {}", fmt_poly(&r.gvec[0]), fmt_poly(&r.gvec[1])).unwrap();
    }
    s
}

/// Parses the region-block text format. Missing fields default to zero
/// loads and the identity diffusion matrix.
pub fn read_problem(text: &str) -> Result<ProblemSpec, ProblemError> {
    struct Block {
        a: SymMat2,
        f: ScalarField,
        fvec: [Poly2; 2],
        g: ScalarField,
        gvec: [Poly2; 2],
    }
    impl Block {
        fn empty() -> Block {
            Block {
                a: SymMat2::identity(),
                f: ScalarField::zero(),
                fvec: [Poly2::zero(), Poly2::zero()],
                g: ScalarField::zero(),
                gvec: [Poly2::zero(), Poly2::zero()],
            }
        }
    }

    let parse_f64 = |ln: usize, s: &str| {
        s.parse::<f64>()
            .map_err(|e| ProblemError::Parse(ln, e.to_string()))
    };
    let parse_poly = |ln: usize, s: &str| -> Result<Poly2, ProblemError> {
        let coeffs = s
            .split_whitespace()
            .map(|t| parse_f64(ln, t))
            .collect::<Result<Vec<_>, _>>()?;
        Poly2::new(coeffs)
    };
    let parse_scalar = |ln: usize, rest: &str| -> Result<ScalarField, ProblemError> {
        let rest = rest.trim();
        if let Some(amp) = rest.strip_prefix("sin") {
            Ok(ScalarField::SinSin {
                amp: parse_f64(ln, amp.trim())?,
            })
        } else if let Some(coeffs) = rest.strip_prefix("poly") {
            Ok(ScalarField::Poly(parse_poly(ln, coeffs)?))
        } else {
            Err(ProblemError::Parse(
                ln,
                "scalar field must start with `poly` or `sin`".into(),
            ))
        }
    };
    let parse_vec = |ln: usize, rest: &str| -> Result<[Poly2; 2], ProblemError> {
        let (x, y) = rest
            .split_once(';')
            .ok_or_else(|| ProblemError::Parse(ln, "vector field needs `; `".into()))?;
        Ok([parse_poly(ln, x)?, parse_poly(ln, y)?])
    };

    let mut blocks: Vec<(usize, Block)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tag, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if tag == "region" {
            let id = rest
                .trim()
                .parse::<usize>()
                .map_err(|e| ProblemError::Parse(ln, e.to_string()))?;
            blocks.push((id, Block::empty()));
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| ProblemError::Parse(ln, "field before first `region`".into()))?;
        match tag {
            "A" => {
                let vals = rest
                    .split_whitespace()
                    .map(|t| parse_f64(ln, t))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != 3 {
                    return Err(ProblemError::Parse(ln, "A needs `a11 a12 a22`".into()));
                }
                block.1.a = SymMat2 {
                    a11: vals[0],
                    a12: vals[1],
                    a22: vals[2],
                };
            }
            "f" => block.1.f = parse_scalar(ln, rest)?,
            "g" => block.1.g = parse_scalar(ln, rest)?,
            "fvec" => block.1.fvec = parse_vec(ln, rest)?,
            "gvec" => block.1.gvec = parse_vec(ln, rest)?,
            other => return Err(ProblemError::UnknownField(other.into())),
        }
    }
    blocks.sort_by_key(|(id, _)| *id);
    for (i, (id, _)) in blocks.iter().enumerate() {
        if *id != i {
            return Err(ProblemError::InvalidData(format!(
                "region ids must be 0..n without gaps, got {id}"
            )));
        }
    }
    ProblemSpec::new(
        blocks
            .into_iter()
            .map(|(_, b)| RegionData::new(b.a, b.f, b.fvec, b.g, b.gvec))
            .collect(),
    )
}
