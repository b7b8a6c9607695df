//! Sparse linear algebra for the Newton step: CSR storage, a greedy
//! distance-aware coloring for finite-difference Jacobians with known
//! sparsity, and Jacobi-preconditioned BiCGSTAB with a dense LU fallback.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Allocates the structure from per-row column lists (sorted, deduped);
    /// values start at zero.
    pub fn from_structure(rows: &[Vec<usize>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for cols in rows {
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let vals = vec![0.0; col_idx.len()];
        Csr {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        let pos = self.col_idx[lo..hi]
            .binary_search(&col)
            .expect("column not in row structure");
        self.vals[lo + pos] = value;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for row in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            out[row] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                if self.col_idx[k] == row {
                    d[row] = self.vals[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }
}

/// Colors columns so that no two same-colored columns appear in any single
/// row's support; one finite-difference residual evaluation then yields one
/// Jacobian entry per row and color.
pub fn color_columns(supports: &[Vec<usize>]) -> Vec<usize> {
    let n = supports.len();
    let mut rows_of_col: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (row, cols) in supports.iter().enumerate() {
        for &c in cols {
            rows_of_col[c].push(row);
        }
    }
    let mut color = vec![usize::MAX; n];
    let mut used = Vec::new();
    for j in 0..n {
        used.clear();
        for &row in &rows_of_col[j] {
            for &other in &supports[row] {
                if other != j && color[other] != usize::MAX {
                    used.push(color[other]);
                }
            }
        }
        used.sort_unstable();
        used.dedup();
        let mut c = 0;
        for &u in &used {
            if u == c {
                c += 1;
            } else if u > c {
                break;
            }
        }
        color[j] = c;
    }
    color
}

/// Jacobi-preconditioned BiCGSTAB for `A x = b`.
pub fn bicgstab(a: &Csr, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut diag = a.diagonal();
    for d in diag.iter_mut() {
        if *d == 0.0 {
            *d = 1.0;
        }
    }
    bicgstab_op(|x, out| a.matvec(x, out), &diag, b, rtol, max_iter)
}

/// Diagonally preconditioned BiCGSTAB for an abstract operator. Returns the
/// solution once `||r|| <= rtol * ||b||` (plus an absolute floor for tiny
/// right-hand sides); errors on breakdown or iteration exhaustion.
pub fn bicgstab_op(
    apply: impl Fn(&[f64], &mut [f64]),
    precond_diag: &[f64],
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = rtol * b_norm + f64::MIN_POSITIVE;

    let precond = |v: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(v.iter().zip(precond_diag).map(|(x, d)| x / d));
    };

    fn r0_norm_sq(r0: &[f64], r: &[f64]) -> f64 {
        let a: f64 = r0.iter().map(|x| x * x).sum();
        let b: f64 = r.iter().map(|x| x * x).sum();
        (a * b).sqrt()
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = Vec::new();
    let mut shat = Vec::new();
    let mut t = vec![0.0; n];

    let mut r0 = r0;
    for _ in 0..max_iter {
        let mut rho_new: f64 = r0.iter().zip(&r).map(|(a, b)| a * b).sum();
        // restart when the shadow residual loses correlation
        if rho_new.abs() < 1e-14 * r0_norm_sq(&r0, &r) {
            r0.copy_from_slice(&r);
            p.copy_from_slice(&r);
            rho = r.iter().map(|x| x * x).sum();
            rho_new = rho;
            omega = 1.0;
            alpha = 1.0;
        }
        if rho_new.abs() < 1e-300 {
            return Err(Error::LinearSolve("bicgstab breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        apply(&phat, &mut v);
        let r0v: f64 = r0.iter().zip(&v).map(|(a, b)| a * b).sum();
        if r0v.abs() < 1e-300 {
            return Err(Error::LinearSolve("bicgstab breakdown (r0.v)".into()));
        }
        alpha = rho / r0v;
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        if norm(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(x);
        }
        precond(&s, &mut shat);
        apply(&shat, &mut t);
        let tt: f64 = t.iter().map(|x| x * x).sum();
        if tt == 0.0 {
            return Err(Error::LinearSolve("bicgstab breakdown (t)".into()));
        }
        omega = t.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol {
            return Ok(x);
        }
        if omega.abs() < 1e-300 {
            return Err(Error::LinearSolve("bicgstab breakdown (omega)".into()));
        }
    }
    Err(Error::LinearSolve(format!(
        "bicgstab did not reach rtol {rtol} in {max_iter} iterations"
    )))
}

/// Dense LU solve of a CSR system; the fallback path for small systems.
pub fn dense_solve(a: &Csr, b: &[f64]) -> Result<Vec<f64>> {
    let m = a.to_dense();
    let rhs = DVector::from_column_slice(b);
    m.lu()
        .solve(&rhs)
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::LinearSolve("dense LU factorization failed".into()))
}
