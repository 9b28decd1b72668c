//! Gauss–Legendre quadrature on edges and the reference triangle.
//!
//! The triangle rule is a tensor Gauss rule collapsed onto the reference
//! triangle `{(x,y): x,y >= 0, x+y <= 1}`; a rule of algebraic degree `d`
//! integrates every bivariate polynomial of total degree `<= d` exactly.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[0, 1]`.
/// Exact for polynomials of degree `2n - 1`. Computed by Newton iteration
/// on the Legendre recurrence; fully deterministic.
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 1..=n {
        // Standard initial guess for the i-th root of P_n on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((0.5 * (x + 1.0), 0.5 * w));
    }
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0f64, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule on the reference triangle. Weights sum to `1/2`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// `(xi, eta, weight)` triples.
    pub points: Vec<(f64, f64, f64)>,
    pub degree: usize,
}

impl TriangleRule {
    /// A rule exact for total degree `<= degree`.
    pub fn with_degree(degree: usize) -> TriangleRule {
        // Collapsed square: x = u, y = v (1 - u), Jacobian (1 - u). A
        // monomial x^a y^b becomes degree a + b + 1 in u and b in v.
        let n = (degree + 3) / 2;
        let gl = gauss_legendre_01(n);
        let mut points = Vec::with_capacity(n * n);
        for &(u, wu) in &gl {
            for &(v, wv) in &gl {
                points.push((u, v * (1.0 - u), wu * wv * (1.0 - u)));
            }
        }
        TriangleRule { points, degree }
    }
}

/// Edge rule on `[0, 1]` exact for degree `<= degree`.
pub fn edge_rule(degree: usize) -> Vec<(f64, f64)> {
    gauss_legendre_01(degree / 2 + 1)
}

/// Exact integral of `x^a y^b` over the reference triangle: `a! b! / (a+b+2)!`.
pub fn reference_monomial_integral(a: u32, b: u32) -> f64 {
    let fact = |m: u32| (1..=m as u64).product::<u64>() as f64;
    fact(a) * fact(b) / fact(a + b + 2)
}
