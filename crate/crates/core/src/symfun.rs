//! Elementary symmetric functions and the derivatives of the induced
//! operator `F = sigma_k` on eigenvalue vectors.
//!
//! For `lambda = (lambda_1, ..., lambda_n)` the k-th elementary symmetric
//! function is the sum of all k-fold products of distinct entries,
//!
//! ```text
//! sigma_k(lambda) = sum_{i_1 < ... < i_k} lambda_{i_1} * ... * lambda_{i_k},
//! ```
//!
//! with the conventions `sigma_0 = 1` and `sigma_k = 0` for `k` larger than
//! the vector length, so boundary recurrences never need a special case.
//! `(lambda|i)` denotes the vector with the i-th entry deleted, `(lambda|ij)`
//! with two entries deleted; these deleted variants are what the gradient and
//! Hessian of `sigma_k` (as a function of a symmetric matrix, evaluated at a
//! diagonal point) are made of:
//!
//! ```text
//! d sigma_k / d a_pq           = sigma_{k-1}(lambda|p) * delta_pq
//! d^2 sigma_k / d a_pp d a_rr  = sigma_{k-2}(lambda|pr)      (p != r)
//! d^2 sigma_k / d a_pq d a_qp  = -sigma_{k-2}(lambda|pq)     (p != q)
//! ```
//!
//! and every other second-derivative entry vanishes.
//!
//! Evaluation uses the prefix recurrence `e_k^(m) = e_k^(m-1) +
//! lambda_m * e_{k-1}^(m-1)` (O(n k), no divisions), which is stable for the
//! mixed-sign inputs that cone sampling produces. Deleted-index values are
//! recomputed on the reduced vector rather than obtained by polynomial
//! deflation; at the dimensions this crate targets (n <= 8 in the algebraic
//! modules) robustness beats speed.

use crate::error::{Error, Result};

// ELEMENTARY SYMMETRIC EVALUATION
// ================================================================================================

/// Total evaluation of `sigma_k` on a raw slice: `k = 0` gives 1 and
/// `k > values.len()` gives 0. No validation; callers that need the
/// domain-checked contract go through [`sigma`].
pub(crate) fn esp(values: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > values.len() {
        return 0.0;
    }
    // e[j] holds sigma_j of the prefix processed so far.
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &v in values {
        let top = k.min(values.len());
        for j in (1..=top).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e[k]
}

/// Evaluation of `sigma_k` on a slice with a set of positions removed.
/// `omit` must be sorted or not; entries are skipped by linear membership
/// test (the sets in play have at most two elements).
pub(crate) fn esp_omit(values: &[f64], k: usize, omit: &[usize]) -> f64 {
    if omit.is_empty() {
        return esp(values, k);
    }
    let reduced: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|(i, _)| !omit.contains(i))
        .map(|(_, &v)| v)
        .collect();
    esp(&reduced, k)
}

// DOMAIN TYPES
// ================================================================================================

/// An ordered real vector of eigenvalues / principal curvatures.
///
/// Entries are kept in the order given at construction; [`LambdaVec::sorted_view`]
/// exposes the non-increasing rearrangement together with the stable
/// permutation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaVec {
    values: Vec<f64>,
}

impl LambdaVec {
    /// Builds an eigenvalue vector. Requires length >= 2 and finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "eigenvalue vector needs length >= 2, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite eigenvalue {bad}")));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Non-increasing rearrangement plus the stable permutation `perm` such
    /// that `sorted[j] = values[perm[j]]`; ties keep their original order.
    pub fn sorted_view(&self) -> (Vec<f64>, Vec<usize>) {
        let mut perm: Vec<usize> = (0..self.values.len()).collect();
        perm.sort_by(|&a, &b| {
            self.values[b]
                .partial_cmp(&self.values[a])
                .expect("entries are finite by construction")
                .then(a.cmp(&b))
        });
        let sorted = perm.iter().map(|&i| self.values[i]).collect();
        (sorted, perm)
    }

    /// True if the stored order is already non-increasing.
    pub fn is_sorted_non_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Gradient and second derivatives of `F = sigma_k` at a diagonal point.
///
/// The fourth-order object `F^{pq,rs}` has only two nonzero patterns, so it
/// is stored as two `n x n` tables: `diag_pairs[(p,r)] = sigma_{k-2}(lambda|pr)`
/// for `p != r` (the `p=q, r=s` pattern) and
/// `off_pairs[(p,q)] = -sigma_{k-2}(lambda|pq)` for `p != q`
/// (the `p=s, q=r` pattern). [`SigmaDerivatives::hess`] folds the patterns
/// back into the full four-index accessor.
#[derive(Debug, Clone)]
pub struct SigmaDerivatives {
    k: usize,
    n: usize,
    grad: Vec<f64>,
    diag_pairs: Vec<f64>,
    off_pairs: Vec<f64>,
}

impl SigmaDerivatives {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `grad[p] = sigma_{k-1}(lambda|p)`.
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// Table of `sigma_{k-2}(lambda|pr)` for `p != r`, zero on the diagonal.
    pub fn diag_pair(&self, p: usize, r: usize) -> f64 {
        self.diag_pairs[p * self.n + r]
    }

    /// Table of `-sigma_{k-2}(lambda|pq)` for `p != q`, zero on the diagonal.
    pub fn off_pair(&self, p: usize, q: usize) -> f64 {
        self.off_pairs[p * self.n + q]
    }

    /// Full four-index accessor `F^{pq,rs}`; off-pattern entries are exactly
    /// zero.
    pub fn hess(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        if p == q && r == s && p != r {
            self.diag_pair(p, r)
        } else if p == s && q == r && p != q {
            self.off_pair(p, q)
        } else {
            0.0
        }
    }
}

// OPERATIONS
// ================================================================================================

/// `sigma_k(lambda)` with the domain check `0 <= k <= n`.
pub fn sigma(lambda: &LambdaVec, k: usize) -> Result<f64> {
    if k > lambda.n() {
        return Err(Error::Domain(format!(
            "sigma_{k} undefined for n = {} (need 0 <= k <= n)",
            lambda.n()
        )));
    }
    Ok(esp(lambda.values(), k))
}

/// `sigma_k` of the vector with the positions in `omitted` deleted
/// (0-based). Requires distinct valid indices and `k <= n - |omitted|`.
pub fn sigma_omit(lambda: &LambdaVec, k: usize, omitted: &[usize]) -> Result<f64> {
    let n = lambda.n();
    for (j, &i) in omitted.iter().enumerate() {
        if i >= n {
            return Err(Error::Domain(format!(
                "omitted index {i} out of range for n = {n}"
            )));
        }
        if omitted[..j].contains(&i) {
            return Err(Error::Domain(format!("omitted index {i} repeated")));
        }
    }
    if k > n - omitted.len() {
        return Err(Error::Domain(format!(
            "sigma_{k} undefined on a reduced vector of length {}",
            n - omitted.len()
        )));
    }
    Ok(esp_omit(lambda.values(), k, omitted))
}

/// Gradient of `sigma_k`: component `p` is `sigma_{k-1}(lambda|p)`.
/// Requires `1 <= k <= n`.
pub fn sigma_grad(lambda: &LambdaVec, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > lambda.n() {
        return Err(Error::Domain(format!(
            "sigma_grad needs 1 <= k <= n, got k = {k}, n = {}",
            lambda.n()
        )));
    }
    Ok((0..lambda.n())
        .map(|p| esp_omit(lambda.values(), k - 1, &[p]))
        .collect())
}

/// Second derivatives of `sigma_k` as the two-table structure
/// [`SigmaDerivatives`]. Requires `2 <= k <= n`.
pub fn sigma_hess(lambda: &LambdaVec, k: usize) -> Result<SigmaDerivatives> {
    let n = lambda.n();
    if k < 2 || k > n {
        return Err(Error::Domain(format!(
            "sigma_hess needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let grad = sigma_grad(lambda, k)?;
    let mut diag_pairs = vec![0.0; n * n];
    let mut off_pairs = vec![0.0; n * n];
    for p in 0..n {
        for r in 0..n {
            if p == r {
                continue;
            }
            let s = esp_omit(lambda.values(), k - 2, &[p, r]);
            diag_pairs[p * n + r] = s;
            off_pairs[p * n + r] = -s;
        }
    }
    Ok(SigmaDerivatives {
        k,
        n,
        grad,
        diag_pairs,
        off_pairs,
    })
}
