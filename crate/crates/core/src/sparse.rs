//! Compressed sparse rows and the SPD solvers used by the pressure equation.

use crate::error::{Error, Result};

/// Compressed-sparse-row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets; duplicates are summed, columns sorted per row.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `y += Aᵀ x`.
    pub fn matvec_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, &xr) in x.iter().enumerate().take(self.nrows) {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trip.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// Largest `|r - c|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖b − A x‖ / ‖b‖`, or `‖A x‖` when `b = 0`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Cholesky factor of a symmetric positive definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i stores L[i][i-bw..=i]; entries left of column 0 stay zero
    data: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Numerical("matrix is not square".into()));
        }
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for (c, v) in a.row(i) {
                if c <= i {
                    data[i * w + (c + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= data[i * w + (k + bw - i)] * data[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!(
                            "matrix is not positive definite (pivot {i} = {s:e})"
                        )));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + 1 + bw).min(n) {
                s -= self.data[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.data[i * w + bw];
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    /// Direct banded Cholesky with up to three steps of iterative refinement.
    BandedCholesky,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient { max_iter: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::BandedCholesky
    }
}

/// A prepared SPD solver; the factorization is reused across right-hand sides,
/// so adjoint solves cost only a pair of triangular sweeps.
#[derive(Debug, Clone)]
pub enum PreparedSolver {
    Cholesky(BandedCholesky),
    Cg { max_iter: usize },
}

impl PreparedSolver {
    pub fn new(kind: LinearSolver, a: &CsrMatrix) -> Result<Self> {
        Ok(match kind {
            LinearSolver::BandedCholesky => PreparedSolver::Cholesky(BandedCholesky::factor(a)?),
            LinearSolver::ConjugateGradient { max_iter } => PreparedSolver::Cg { max_iter },
        })
    }

    /// Solves `A x = b` to relative residual `tol`; returns the solution and
    /// the achieved residual.
    pub fn solve(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
        match self {
            PreparedSolver::Cholesky(ch) => {
                let mut x = ch.solve(b);
                let mut res = relative_residual(a, &x, b);
                for _ in 0..3 {
                    if res <= tol {
                        break;
                    }
                    let ax = a.matvec(&x);
                    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                    let dx = ch.solve(&r);
                    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
                    res = relative_residual(a, &x, b);
                }
                if res <= tol {
                    Ok((x, res))
                } else {
                    Err(Error::Convergence { residual: res })
                }
            }
            PreparedSolver::Cg { max_iter } => conjugate_gradient(a, b, tol, *max_iter),
        }
    }
}

pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = a.nrows();
    let bn = norm(b);
    if bn == 0.0 {
        return Ok((vec![0.0; n], 0.0));
    }
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / a.get(i, i)).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        a.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) / bn <= tol {
            // recompute the true residual to guard against drift
            let res = relative_residual(a, &x, b);
            if res <= tol {
                return Ok((x, res));
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence {
        residual: relative_residual(a, &x, b),
    })
}
