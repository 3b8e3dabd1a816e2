//! Compressed sparse row matrices, a faer-backed sparse LU, and restarted
//! GMRES with right preconditioning.

use faer::prelude::*;
use faer::sparse::SparseColMat;

use crate::error::{FsiError, Result};

pub type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Builds a matrix from unordered triplets; duplicates are summed in
    /// input order so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<Triplet>) -> Self {
        trips.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut data: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            debug_assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(p) => self.data[a + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec: input length");
        assert_eq!(y.len(), self.nrows, "matvec: output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            *yi = s;
        }
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec_t: input length");
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.data[p] * xi;
            }
        }
        y
    }

    /// x^T A y
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        dot(x, &ay)
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(i, j, v)| (j, i, v)).collect(),
        )
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    /// Linear combination sum_k coef_k * A_k of equally shaped matrices.
    pub fn combine(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        let mut trips = Vec::with_capacity(terms.iter().map(|t| t.1.nnz()).sum());
        for (c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "combine: shape mismatch");
            if *c != 0.0 {
                trips.extend(m.triplets().map(|(i, j, v)| (i, j, c * v)));
            }
        }
        CsrMatrix::from_triplets(nrows, ncols, trips)
    }

    /// Submatrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut cmap = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            cmap[c] = k;
        }
        let mut trips = Vec::new();
        for (ri, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if cmap[c] != usize::MAX {
                    trips.push((ri, cmap[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), trips)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] += v;
        }
        d
    }

    /// Coordinate text dump, one `i j value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::with_capacity(32 * self.nnz());
        for (i, j, v) in self.triplets() {
            s.push_str(&format!("{i} {j} {v:.17e}\n"));
        }
        s
    }
}

/// Sparse LU factorization of a square matrix.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn new(a: &CsrMatrix, context: &str) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(FsiError::Dimension(format!(
                "{context}: LU of a {}x{} matrix",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        let trips: Vec<(usize, usize, f64)> = a.triplets().collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips).map_err(|e| {
            FsiError::Singular {
                context: context.to_string(),
                message: format!("{e:?}"),
            }
        })?;
        let lu = m.sp_lu().map_err(|e| FsiError::Singular {
            context: context.to_string(),
            message: format!("{e:?}"),
        })?;
        let out = SparseLu { n, lu };
        if n > 0 {
            let probe = out.solve(&vec![1.0; n]);
            if probe.iter().any(|v| !v.is_finite()) {
                return Err(FsiError::Singular {
                    context: context.to_string(),
                    message: "factorization produced non-finite values".into(),
                });
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "LU solve: rhs length");
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x.read(i, 0)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            rel_tol: 1e-12,
            max_iter: 500,
            restart: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Restarted GMRES for A x = b with right preconditioner M, so the
/// reported residual is the true residual of the original system.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: GmresOptions,
) -> (Vec<f64>, GmresReport) {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (
            x,
            GmresReport {
                iterations: 0,
                rel_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut total = 0;
    let mut r = sub(b, &apply(&x));
    let mut rel = norm2(&r) / bnorm;
    while rel > opts.rel_tol && total < opts.max_iter {
        let beta = norm2(&r);
        let m = opts.restart.min(opts.max_iter - total).max(1);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_done = 0;
        for k in 0..m {
            let mut w = apply(&precond(&v[k]));
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[i][k] += c;
                    axpy(-c, vi, &mut w);
                }
            }
            h[k + 1][k] = norm2(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let den = a.hypot(bb);
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = a / den;
                sn[k] = bb / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_done = k + 1;
            let hn = norm2(&w);
            if (g[k + 1].abs() / bnorm) <= 0.1 * opts.rel_tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k_done];
        for i in (0..k_done).rev() {
            let mut s = g[i];
            for j in i + 1..k_done {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut z = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            axpy(*yi, vi, &mut z);
        }
        let dx = precond(&z);
        axpy(1.0, &dx, &mut x);
        r = sub(b, &apply(&x));
        let new_rel = norm2(&r) / bnorm;
        let stalled = new_rel >= rel * (1.0 - 1e-3) && k_done == m && rel < 1e-8;
        rel = new_rel;
        if stalled {
            break;
        }
    }
    (
        x,
        GmresReport {
            iterations: total,
            rel_residual: rel,
            converged: rel <= opts.rel_tol,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.3));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 2.0), (0, 1, 0.5)]);
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.transpose().get(1, 0), 1.5);
    }

    #[test]
    fn lu_solves() {
        let a = laplace_1d(50, 0.1);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x);
        let lu = SparseLu::new(&a, "test").unwrap();
        let y = lu.solve(&b);
        assert!(norm2(&sub(&x, &y)) < 1e-12);
    }

    #[test]
    fn gmres_converges_with_and_without_preconditioner() {
        let a = laplace_1d(80, 1.0);
        let b: Vec<f64> = (0..80).map(|i| 1.0 + (i % 7) as f64).collect();
        let (x, rep) = gmres(
            |v| a.matvec(v),
            |v| v.to_vec(),
            &b,
            None,
            GmresOptions { rel_tol: 1e-12, max_iter: 400, restart: 20 },
        );
        assert!(rep.converged, "{rep:?}");
        assert!(norm2(&sub(&a.matvec(&x), &b)) / norm2(&b) < 1e-11);
        let lu = SparseLu::new(&laplace_1d(80, 0.8), "pc").unwrap();
        let (_, rep) = gmres(|v| a.matvec(v), |v| lu.solve(v), &b, None, GmresOptions::default());
        assert!(rep.converged && rep.iterations < 40, "{rep:?}");
    }

    #[test]
    fn select_and_combine() {
        let a = laplace_1d(5, 0.0);
        let s = a.select(&[1, 3], &[0, 1, 2]);
        assert_eq!(s.get(0, 0), -1.0);
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 2), -1.0);
        let c = CsrMatrix::combine(&[(2.0, &a), (-1.0, &a)]);
        assert_eq!(c, a);
    }
}
