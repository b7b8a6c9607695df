//! The Garding cone `Gamma_k = { lambda : sigma_j(lambda) > 0, 1 <= j <= k }`:
//! membership, deterministic sampling, and the inequalities admissible
//! vectors satisfy.
//!
//! Three facts about sorted `lambda in Gamma_k` are checked empirically by
//! this module and its tests:
//!
//! 1. negative entries are controlled by the top one:
//!    `-lambda_i <= (n-k)/k * lambda_1`;
//! 2. the top term of the gradient expansion carries a definite fraction of
//!    the value: `lambda_1 * sigma_{k-1}(lambda|1) >= C(n,k) * sigma_k`,
//!    with `C(n,k) > 0` known only abstractly — [`estimate_cnk`] brackets it
//!    from above by an empirical minimum;
//! 3. all deleted values stay positive: `sigma_j(lambda|i_1...i_s) > 0`
//!    whenever `j + s <= k`.
//!
//! Sampling is rejection-based on top of constructions that make acceptance
//! practical, and fully deterministic given a seed, so campaigns can
//! partition the seed space across workers.

use crate::error::{Error, Result};
use crate::symfun::{esp, esp_omit, LambdaVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A vector sampled from `Gamma_k`, sorted non-increasing, together with
/// the provenance needed to reproduce it.
#[derive(Debug, Clone)]
pub struct ConeSample {
    pub lambda: LambdaVec,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Number of rejected candidates before acceptance.
    pub attempts: u64,
}

/// Options for [`sample_gamma`].
#[derive(Debug, Clone)]
pub struct SampleOpts {
    /// Force `lambda_n < -T` (requires `k = n-1`, `T > 0`).
    pub force_negative_min: Option<f64>,
    /// Force `lambda_1 = ... = lambda_m` bitwise.
    pub multiplicity: Option<usize>,
    /// Log-uniform magnitude range used by the generators.
    pub scale_range: (f64, f64),
    /// Rejection budget before giving up.
    pub max_attempts: u64,
}

impl Default for SampleOpts {
    fn default() -> Self {
        Self {
            force_negative_min: None,
            multiplicity: None,
            scale_range: (1e-3, 1e3),
            max_attempts: 100_000,
        }
    }
}

/// Strict membership test: `sigma_j(lambda) > 0` for every `j in 1..=k`.
pub fn in_gamma(lambda: &LambdaVec, k: usize) -> bool {
    assert!(k >= 1 && k <= lambda.n(), "in_gamma needs 1 <= k <= n");
    (1..=k).all(|j| esp(lambda.values(), j) > 0.0)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Largest `w` such that appending `-w` to the positive vector `y` keeps
/// all `sigma_j > 0` for `j <= k`: the minimum of the Newton-type ratios
/// `sigma_j(y) / sigma_{j-1}(y)`.
fn negative_headroom(y: &[f64], k: usize) -> f64 {
    let mut w = f64::INFINITY;
    for j in 1..=k.min(y.len()) {
        let num = esp(y, j);
        let den = esp(y, j - 1);
        if den > 0.0 {
            w = w.min(num / den);
        }
    }
    if k > y.len() {
        // sigma_k of the extended vector is -w * sigma_{k-1}(y) < 0: no headroom
        return 0.0;
    }
    w.max(0.0)
}

/// Draws `lambda in Gamma_k`, sorted non-increasing, deterministically from
/// `seed`.
///
/// Without options the generator alternates between an all-positive draw
/// (log-uniform magnitudes over `scale_range`) and a one-negative draw in
/// which the negative magnitude is placed strictly inside the headroom left
/// by the positive part. With `force_negative_min = T` (only for `k = n-1`)
/// the magnitude of the negative entry is `T * (1 + |E|)`, `E` exponential,
/// and the positive entries are `|lambda_n| * (1 + U_i)` with `U_i`
/// log-uniform on `[1e-3, scale_range.1]` — the necessary condition
/// `lambda_i > |lambda_n|` then makes rejection practical. Acceptance is
/// always decided by a final [`in_gamma`] check, so the construction is a
/// proposal, never a proof.
pub fn sample_gamma(n: usize, k: usize, opts: &SampleOpts, seed: u64) -> Result<ConeSample> {
    if n < 2 {
        return Err(Error::Domain(format!("sample_gamma needs n >= 2, got {n}")));
    }
    if k < 1 || k > n {
        return Err(Error::Domain(format!(
            "sample_gamma needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if let Some(t) = opts.force_negative_min {
        if k != n - 1 {
            return Err(Error::Domain(
                "force_negative_min requires k = n - 1".into(),
            ));
        }
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "force_negative_min threshold must be positive, got {t}"
            )));
        }
    }
    if let Some(m) = opts.multiplicity {
        let cap = if opts.force_negative_min.is_some() {
            n - 1
        } else {
            n
        };
        if m < 1 || m > cap {
            return Err(Error::Domain(format!(
                "multiplicity {m} out of range 1..={cap}"
            )));
        }
    }
    let (lo, hi) = opts.scale_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!(
            "scale_range must satisfy 0 < lo < hi, got ({lo}, {hi})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts: u64 = 0;
    while attempts < opts.max_attempts {
        attempts += 1;
        let mut values: Vec<f64> = if let Some(t) = opts.force_negative_min {
            let e: f64 = Exp1.sample(&mut rng);
            let neg = t * (1.0 + e.abs());
            let mut v: Vec<f64> = (0..n - 1)
                .map(|_| neg * (1.0 + log_uniform(&mut rng, 1e-3, hi)))
                .collect();
            v.push(-neg);
            v
        } else if k == n || rng.gen_bool(0.5) {
            (0..n).map(|_| log_uniform(&mut rng, lo, hi)).collect()
        } else {
            let y: Vec<f64> = (0..n - 1).map(|_| log_uniform(&mut rng, lo, hi)).collect();
            let w_max = negative_headroom(&y, k);
            if !(w_max > 0.0) {
                continue;
            }
            let w = w_max * rng.gen_range(0.05..0.95);
            let mut v = y;
            v.push(-w);
            v
        };

        values.sort_by(|a, b| b.partial_cmp(a).unwrap());

        if let Some(m) = opts.multiplicity {
            let top = values[0];
            for v in values.iter_mut().take(m).skip(1) {
                *v = top;
            }
            // the forced block must stay strictly above the rest
            if m < n && !(values[m - 1] > values[m]) {
                continue;
            }
        }

        let lambda = LambdaVec::new(values)?;
        if !in_gamma(&lambda, k) {
            continue;
        }
        if let Some(t) = opts.force_negative_min {
            if !(lambda.values()[n - 1] < -t) {
                continue;
            }
        }
        return Ok(ConeSample {
            lambda,
            n,
            k,
            seed,
            attempts: attempts - 1,
        });
    }
    Err(Error::SamplingExhausted {
        attempts,
        context: format!("sample_gamma(n = {n}, k = {k})"),
    })
}

/// Result of the negative-part check `-lambda_i <= (n-k)/k * lambda_1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NegativePartReport {
    /// Largest `(-lambda_i) * k / ((n-k) * lambda_1)` over negative entries;
    /// 0 when there are none (in particular for k = n).
    pub worst_ratio: f64,
    pub violated: bool,
}

/// Checks the negative-part bound on a sorted cone sample.
pub fn negative_part_bound(sample: &ConeSample) -> NegativePartReport {
    let (n, k) = (sample.n, sample.k);
    if k == n {
        return NegativePartReport {
            worst_ratio: 0.0,
            violated: false,
        };
    }
    let values = sample.lambda.values();
    let top = values[0];
    let worst = values
        .iter()
        .filter(|&&v| v < 0.0)
        .map(|&v| (-v) * k as f64 / ((n - k) as f64 * top))
        .fold(0.0f64, f64::max);
    NegativePartReport {
        worst_ratio: worst,
        violated: worst > 1.0 + 1e-12,
    }
}

/// The ratio `lambda_1 * sigma_{k-1}(lambda|1) / sigma_k(lambda)` whose
/// sampled minimum brackets the optimal cone constant from above.
pub fn top_term_ratio(lambda: &LambdaVec, k: usize) -> f64 {
    let v = lambda.values();
    v[0] * esp_omit(v, k - 1, &[0]) / esp(v, k)
}

/// Empirical minimum of [`top_term_ratio`] over `trials` sorted samples of
/// `Gamma_k`; an upper-bound estimate of the optimal constant, strictly
/// positive because every factor is.
pub fn estimate_cnk(n: usize, k: usize, trials: u64, seed: u64) -> Result<f64> {
    if trials < 1 {
        return Err(Error::Domain("estimate_cnk needs trials >= 1".into()));
    }
    let opts = SampleOpts::default();
    let mut min = f64::INFINITY;
    for t in 0..trials {
        let s = sample_gamma(n, k, &opts, crate::derive_seed(seed, t))?;
        min = min.min(top_term_ratio(&s.lambda, k));
    }
    Ok(min)
}

/// True iff every principal-curvature entry at every point is `>= -k0`
/// (boundary included). Errors on an empty field or negative `k0`.
pub fn is_semi_convex(kappa_field: &[LambdaVec], k0: f64) -> Result<bool> {
    if kappa_field.is_empty() {
        return Err(Error::Domain("semi-convexity of an empty field".into()));
    }
    if k0 < 0.0 {
        return Err(Error::Domain(format!("k0 must be >= 0, got {k0}")));
    }
    Ok(kappa_field
        .iter()
        .all(|l| l.values().iter().all(|&v| v >= -k0)))
}

/// Writes samples as CSV, one lambda per row, columns `lambda_1..lambda_n`.
pub fn write_samples_csv<W: Write>(out: &mut W, samples: &[LambdaVec]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let header: Vec<String> = (1..=first.n()).map(|i| format!("lambda_{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let row: Vec<String> = s.values().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Summary of the cone inequality suite on one `(n, k)` configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeInequalityReport {
    pub n: usize,
    pub k: usize,
    pub trials: u64,
    pub seed: u64,
    /// Max over samples of the negative-part ratio (must be <= 1 + 1e-12).
    pub max_negative_part_ratio: f64,
    pub negative_part_violations: u64,
    /// Min over samples and admissible deletions of `sigma_j(lambda|...)`.
    pub min_deleted_sigma: f64,
    pub deleted_positivity_violations: u64,
    /// Empirical upper bracket of the cone constant.
    pub cnk_estimate: f64,
    pub elapsed_seconds: f64,
}

/// Runs the full inequality suite: the negative-part bound and deleted
/// positivity on `trials` samples, plus the constant estimate on the same
/// number of fresh samples.
pub fn check_cone_inequalities(
    n: usize,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<ConeInequalityReport> {
    let started = std::time::Instant::now();
    let opts = SampleOpts::default();
    let mut max_ratio = 0.0f64;
    let mut ratio_violations = 0;
    let mut min_deleted = f64::INFINITY;
    let mut deleted_violations = 0;
    for t in 0..trials {
        let s = sample_gamma(n, k, &opts, crate::derive_seed(seed, t))?;
        let rep = negative_part_bound(&s);
        max_ratio = max_ratio.max(rep.worst_ratio);
        if rep.violated {
            ratio_violations += 1;
        }
        // every deletion of size s with j + s <= k must stay positive
        let values = s.lambda.values();
        for mask in 1u32..(1 << n) {
            let del = mask.count_ones() as usize;
            if del > k {
                continue;
            }
            let omit: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let reduced: Vec<f64> = values
                .iter()
                .enumerate()
                .filter(|(i, _)| !omit.contains(i))
                .map(|(_, &v)| v)
                .collect();
            for j in 1..=(k - del) {
                let v = esp(&reduced, j);
                min_deleted = min_deleted.min(v);
                if !(v > 0.0) {
                    deleted_violations += 1;
                }
            }
        }
    }
    let cnk = estimate_cnk(n, k, trials, crate::derive_seed(seed, u64::MAX / 2))?;
    Ok(ConeInequalityReport {
        n,
        k,
        trials,
        seed,
        max_negative_part_ratio: max_ratio,
        negative_part_violations: ratio_violations,
        min_deleted_sigma: min_deleted,
        deleted_positivity_violations: deleted_violations,
        cnk_estimate: cnk,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(values: &[f64]) -> LambdaVec {
        LambdaVec::new(values.to_vec()).unwrap()
    }

    #[test]
    fn membership_worked_values() {
        assert!(in_gamma(&lv(&[3.0, 3.0, -1.0]), 2));
        assert!(!in_gamma(&lv(&[1.0, 1.0, -1.0]), 2));
        // strict inequality fails on the boundary
        assert!(!in_gamma(&lv(&[1.0, 0.0, 0.0]), 2));
    }

    #[test]
    fn forced_negative_min_sampling() {
        let opts = SampleOpts {
            force_negative_min: Some(2.0),
            ..Default::default()
        };
        let s = sample_gamma(3, 2, &opts, 7).unwrap();
        assert!(s.lambda.values()[2] < -2.0);
        assert!(in_gamma(&s.lambda, 2));
        assert!(s.lambda.is_sorted_non_increasing());
    }

    #[test]
    fn forced_multiplicity_is_bitwise() {
        let opts = SampleOpts {
            multiplicity: Some(2),
            ..Default::default()
        };
        let s = sample_gamma(3, 2, &opts, 11).unwrap();
        let v = s.lambda.values();
        assert_eq!(v[0].to_bits(), v[1].to_bits());
        assert!(v[1] > v[2]);
    }

    #[test]
    fn unconstrained_sampling_lands_in_cone() {
        let s = sample_gamma(4, 3, &SampleOpts::default(), 3).unwrap();
        assert!(in_gamma(&s.lambda, 3));
    }

    #[test]
    fn sampling_is_deterministic() {
        let opts = SampleOpts {
            force_negative_min: Some(1.5),
            multiplicity: Some(2),
            ..Default::default()
        };
        let a = sample_gamma(4, 3, &opts, 99).unwrap();
        let b = sample_gamma(4, 3, &opts, 99).unwrap();
        let bits_a: Vec<u64> = a.lambda.values().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.lambda.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
        assert_eq!(a.attempts, b.attempts);
    }

    #[test]
    fn sampling_budget_exhaustion_is_reported() {
        // positive entries barely above the forced negative magnitude can
        // never satisfy sigma_2 > 0, so every candidate is rejected
        let opts = SampleOpts {
            force_negative_min: Some(1.0),
            scale_range: (1e-3, 2e-3),
            max_attempts: 200,
            ..Default::default()
        };
        match sample_gamma(3, 2, &opts, 5) {
            Err(Error::SamplingExhausted { attempts, .. }) => assert_eq!(attempts, 200),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn sample_gamma_validates_inputs() {
        assert!(sample_gamma(3, 4, &SampleOpts::default(), 0).is_err());
        let opts = SampleOpts {
            force_negative_min: Some(1.0),
            ..Default::default()
        };
        assert!(sample_gamma(3, 1, &opts, 0).is_err(), "T forcing needs k = n-1");
        let opts2 = SampleOpts {
            multiplicity: Some(5),
            ..Default::default()
        };
        assert!(sample_gamma(3, 2, &opts2, 0).is_err());
    }

    fn sample_with(n: usize, k: usize, seed: u64) -> ConeSample {
        sample_gamma(n, k, &SampleOpts::default(), seed).unwrap()
    }

    #[test]
    fn negative_part_bound_worked_values() {
        let mk = |values: &[f64], n, k| ConeSample {
            lambda: lv(values),
            n,
            k,
            seed: 0,
            attempts: 0,
        };
        let r = negative_part_bound(&mk(&[3.0, 3.0, -1.0], 3, 2));
        assert!((r.worst_ratio - 2.0 / 3.0).abs() < 1e-15);
        assert!(!r.violated);
        let r2 = negative_part_bound(&mk(&[1.0, 1.0, 1.0], 3, 2));
        assert_eq!(r2.worst_ratio, 0.0);
        let r3 = negative_part_bound(&mk(&[7.0, 7.0, -3.0], 3, 2));
        assert!((r3.worst_ratio - 6.0 / 7.0).abs() < 1e-15);
        // k = n leaves no room for negative entries
        let r4 = negative_part_bound(&mk(&[2.0, 1.0, 0.5], 3, 3));
        assert_eq!(r4.worst_ratio, 0.0);
    }

    #[test]
    fn negative_part_bound_holds_on_samples() {
        for seed in 0..200 {
            for (n, k) in [(3, 2), (4, 2), (4, 3), (5, 4)] {
                let s = sample_with(n, k, crate::derive_seed(1000 + seed, (n * 10 + k) as u64));
                let r = negative_part_bound(&s);
                assert!(!r.violated, "n={n} k={k} seed={seed}: ratio {}", r.worst_ratio);
            }
        }
    }

    #[test]
    fn top_term_ratio_worked_values() {
        assert!((top_term_ratio(&lv(&[1.0, 1.0, 1.0]), 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((top_term_ratio(&lv(&[3.0, 3.0, -1.0]), 2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cnk_estimate_is_positive() {
        let c = estimate_cnk(3, 2, 500, 1234).unwrap();
        assert!(c > 0.0, "estimate {c}");
        assert!(estimate_cnk(3, 2, 0, 0).is_err());
    }

    #[test]
    fn semi_convexity_predicate() {
        let f1 = vec![lv(&[0.5, 0.5, 0.5])];
        assert!(is_semi_convex(&f1, 2.0).unwrap());
        let f2 = vec![lv(&[7.0, 7.0, -3.0])];
        assert!(!is_semi_convex(&f2, 2.0).unwrap());
        // boundary counts as semi-convex
        assert!(is_semi_convex(&f2, 3.0).unwrap());
        assert!(is_semi_convex(&[], 1.0).is_err());
        assert!(is_semi_convex(&f1, -1.0).is_err());
    }

    #[test]
    fn positive_entries_dominate_forced_negative() {
        // sorted sample with k = n-1 and negative last entry has every
        // positive entry strictly above |lambda_n|
        let opts = SampleOpts {
            force_negative_min: Some(0.5),
            ..Default::default()
        };
        for seed in 0..100 {
            let s = sample_gamma(4, 3, &opts, seed).unwrap();
            let v = s.lambda.values();
            let w = -v[3];
            assert!(w > 0.0);
            for &x in &v[..3] {
                assert!(x > w, "seed {seed}: {x} vs |min| {w}");
            }
        }
    }

    #[test]
    fn deleted_sigmas_stay_positive_on_samples() {
        for seed in 0..100 {
            let s = sample_with(5, 3, seed);
            let v = s.lambda.values();
            for mask in 1u32..(1 << 5) {
                let del = mask.count_ones() as usize;
                if del > 3 {
                    continue;
                }
                let reduced: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) == 0)
                    .map(|(_, &x)| x)
                    .collect();
                for j in 1..=(3 - del) {
                    assert!(esp(&reduced, j) > 0.0, "seed {seed} mask {mask:b} j {j}");
                }
            }
        }
    }

    #[test]
    fn membership_is_scale_invariant() {
        for seed in 0..50 {
            let s = sample_with(4, 3, 500 + seed);
            for t in [1e-3, 1.0, 1e3] {
                let scaled = lv(&s.lambda.values().iter().map(|v| v * t).collect::<Vec<_>>());
                assert!(in_gamma(&scaled, 3), "seed {seed} t {t}");
            }
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &[lv(&[1.0, 2.0, 3.0]), lv(&[4.0, 5.0, 6.0])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "lambda_1,lambda_2,lambda_3");
        assert_eq!(lines.next().unwrap(), "1,2,3");
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn inequality_suite_runs_clean() {
        let r = check_cone_inequalities(4, 3, 200, 77).unwrap();
        assert_eq!(r.negative_part_violations, 0);
        assert_eq!(r.deleted_positivity_violations, 0);
        assert!(r.max_negative_part_ratio <= 1.0 + 1e-12);
        assert!(r.min_deleted_sigma > 0.0);
        assert!(r.cnk_estimate > 0.0);
    }
}
