//! Sparse symmetric solves: LDL^T factorization with reverse Cuthill-McKee
//! ordering as the default, diagonally preconditioned conjugate gradients
//! as the fallback for very large systems. Both paths are deterministic.

use crate::fem::FemError;

/// Systems up to this many unknowns are solved by the direct factorization.
pub const DIRECT_DOF_LIMIT: usize = 150_000;

const CG_TOL_REL: f64 = 1e-12;

/// Compressed sparse rows, full (symmetric) pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets, summing duplicates. The summation order is the
    /// stable sort order of `(row, col)` pairs, so identical triplet lists
    /// produce bitwise identical matrices.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_counts = vec![0usize; n + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_counts[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        CsrMatrix {
            n,
            row_ptr: row_counts,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .position(|&c| c == i)
                    .map(|k| vals[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    /// max |K - K^T|, used by tests.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let (tc, tv) = self.row(*c);
                let back = tc
                    .iter()
                    .position(|&cc| cc == i)
                    .map(|k| tv[k])
                    .unwrap_or(0.0);
                worst = worst.max((v - back).abs());
            }
        }
        worst
    }
}

/// Reverse Cuthill-McKee ordering of the matrix graph; `perm[new] = old`.
/// BFS ties are broken by ascending degree, then node id.
fn rcm_order(m: &CsrMatrix) -> Vec<usize> {
    let n = m.n;
    let degree = |v: usize| m.row(v).0.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut component = Vec::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: run BFS twice from the min-degree seed
        let mut start = seed;
        for _ in 0..2 {
            let mut seen = vec![false; n];
            let mut frontier = vec![start];
            seen[start] = true;
            let mut last = start;
            while !frontier.is_empty() {
                let mut next = Vec::new();
                for &v in &frontier {
                    for &w in m.row(v).0 {
                        if !seen[w] && !visited[w] {
                            seen[w] = true;
                            next.push(w);
                        }
                    }
                }
                if next.is_empty() {
                    break;
                }
                next.sort_unstable_by_key(|&v| (degree(v), v));
                last = next[0];
                frontier = next;
            }
            start = last;
        }
        // Cuthill-McKee breadth-first sweep
        component.clear();
        component.push(start);
        visited[start] = true;
        let mut head = 0;
        while head < component.len() {
            let v = component[head];
            head += 1;
            let mut nbrs: Vec<usize> = m
                .row(v)
                .0
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            nbrs.sort_unstable_by_key(|&w| (degree(w), w));
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    component.push(w);
                }
            }
        }
        order.extend(component.iter().rev());
    }
    order
}

/// Sparse LDL^T factorization of a permuted SPD matrix (simplicial,
/// up-looking, elimination-tree based).
#[derive(Debug)]
pub struct LdlFactor {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    /// `perm[new] = old`
    perm: Vec<usize>,
}

impl LdlFactor {
    pub fn new(m: &CsrMatrix) -> Result<LdlFactor, FemError> {
        let n = m.n;
        let perm = rcm_order(m);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        // Upper triangle of P A P^T in CSC (rows <= col, rows ascending).
        let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i_old in 0..n {
            let (cols, vals) = m.row(i_old);
            let i = inv[i_old];
            for (c_old, v) in cols.iter().zip(vals) {
                let j = inv[*c_old];
                if i <= j {
                    col_entries[j].push((i, *v));
                }
            }
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::new();
        let mut ax = Vec::new();
        for (j, entries) in col_entries.iter_mut().enumerate() {
            entries.sort_unstable_by_key(|&(i, _)| i);
            for &(i, v) in entries.iter() {
                ai.push(i);
                ax.push(v);
            }
            ap[j + 1] = ai.len();
        }

        // Symbolic pass: elimination tree and column counts of L.
        const NONE: usize = usize::MAX;
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                while i < k && flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }

        // Numeric pass.
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0f64; total];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut lnz_cur = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            let mut dk = 0.0;
            for p in ap[k]..ap[k + 1] {
                let i0 = ai[p];
                if i0 == k {
                    dk += ax[p];
                    continue;
                }
                y[i0] += ax[p];
                let mut len = 0;
                let mut i = i0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = pattern[len];
                }
            }
            for t in top..n {
                let i = stack[t];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = lp[i] + lnz_cur[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                dk -= lki * yi;
                li[p2] = k;
                lx[p2] = lki;
                lnz_cur[i] += 1;
            }
            if !dk.is_finite() || dk <= 0.0 {
                return Err(FemError::NotSpd);
            }
            d[k] = dk;
        }

        Ok(LdlFactor {
            n,
            lp,
            li,
            lx,
            d,
            perm,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w: Vec<f64> = (0..n).map(|new| b[self.perm[new]]).collect();
        for j in 0..n {
            let wj = w[j];
            for p in self.lp[j]..self.lp[j + 1] {
                w[self.li[p]] -= self.lx[p] * wj;
            }
        }
        for j in 0..n {
            w[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = w[j];
            for p in self.lp[j]..self.lp[j + 1] {
                acc -= self.lx[p] * w[self.li[p]];
            }
            w[j] = acc;
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = w[new];
        }
        out
    }

    pub fn fill_in(&self) -> usize {
        self.lx.len()
    }
}

/// Jacobi-preconditioned conjugate gradients with relative residual
/// tolerance 1e-12 and a final true-residual verification.
pub fn pcg(m: &CsrMatrix, b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>, FemError> {
    let n = m.n;
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = m
        .diagonal()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                1.0 / d
            } else {
                f64::NAN // flagged below through breakdown detection
            }
        })
        .collect();
    if inv_diag.iter().any(|v| !v.is_finite()) {
        return Err(FemError::NotSpd);
    }

    let mut x = match x0 {
        Some(g) => g.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    m.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let max_iter = 400 + 60 * (n as f64).sqrt() as usize;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for restart in 0..4 {
        for _ in 0..max_iter {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= CG_TOL_REL * norm_b {
                break;
            }
            m.matvec(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !pap.is_finite() || pap <= 0.0 {
                return Err(FemError::NotSpd);
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        // verify against the true residual; restart if the recurrence drifted
        m.matvec(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= CG_TOL_REL * norm_b {
            return Ok(x);
        }
        if restart == 3 {
            return Err(FemError::NoConvergence);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        p.copy_from_slice(&z);
    }
    Err(FemError::NoConvergence)
}

/// Reusable solver for one symmetric system: a direct factorization at desk
/// scale, conjugate gradients beyond [`DIRECT_DOF_LIMIT`].
pub enum Solver {
    Empty,
    Direct(LdlFactor),
    Iterative,
}

impl Solver {
    pub fn new(m: &CsrMatrix) -> Result<Solver, FemError> {
        if m.n() == 0 {
            Ok(Solver::Empty)
        } else if m.n() <= DIRECT_DOF_LIMIT {
            Ok(Solver::Direct(LdlFactor::new(m)?))
        } else {
            Ok(Solver::Iterative)
        }
    }

    pub fn solve(&self, m: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, FemError> {
        match self {
            Solver::Empty => Ok(Vec::new()),
            Solver::Direct(f) => {
                let mut x = f.solve(b);
                // one step of iterative refinement
                let mut r = vec![0.0; m.n()];
                m.matvec(&x, &mut r);
                for i in 0..m.n() {
                    r[i] = b[i] - r[i];
                }
                let dx = f.solve(&r);
                for i in 0..m.n() {
                    x[i] += dx[i];
                }
                Ok(x)
            }
            Solver::Iterative => pcg(m, b, None),
        }
    }
}
