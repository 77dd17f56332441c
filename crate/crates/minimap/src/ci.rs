//! Partial correlations and Fisher-z conditional independence testing.
//!
//! Test outcomes are memoized in a [`CiCache`]: for a fixed dataset and
//! level α the full outcome map is a pure function of the data, so the
//! cache never invalidates and repeated queries are free.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SuffStats;
use crate::{Error, Result};

/// Correlations are clamped to ±(1 − CLAMP_EPS) before `atanh` so collinear
/// data cannot produce infinities.
pub const CLAMP_EPS: f64 = 1e-12;

/// Reciprocal-condition estimates below this raise [`Error::SingularSubmatrix`].
pub const RCOND_MIN: f64 = 1e-12;

/// Canonical index triple for a CI query: test nodes `i < j` and a sorted
/// conditioning set that contains neither.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CiKey {
    i: usize,
    j: usize,
    s: Vec<usize>,
}

impl CiKey {
    /// Canonicalizes `(i, j, s)`: orders the pair and sorts the set.
    ///
    /// Panics if `i == j`, if the set repeats an element, or if the set
    /// contains `i` or `j`; callers build conditioning sets by excluding the
    /// tested nodes, so any of those is a logic error.
    pub fn new(i: usize, j: usize, s: impl IntoIterator<Item = usize>) -> Self {
        assert_ne!(i, j, "CI query needs two distinct nodes");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let mut s: Vec<usize> = s.into_iter().collect();
        s.sort_unstable();
        if let Some(w) = s.windows(2).find(|w| w[0] == w[1]) {
            panic!("conditioning set repeats node {}", w[0]);
        }
        assert!(
            !s.contains(&i) && !s.contains(&j),
            "conditioning set overlaps the tested pair"
        );
        CiKey { i, j, s }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.s
    }
}

impl std::fmt::Display for CiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {} | {:?})", self.i, self.j, self.s)
    }
}

/// Partial correlation of `key.i` and `key.j` given `key.s`, computed from
/// an arbitrary correlation-like matrix.
///
/// The (|S|+2)×(|S|+2) submatrix over `{i, j} ∪ S` is factorized and the
/// off-diagonal entry of its inverse is normalized:
/// ρ = −Ω_ij / √(Ω_ii Ω_jj). The result is clamped to ±(1 − 1e−12).
pub fn partial_correlation_of(corr: &DMatrix<f64>, key: &CiKey) -> Result<f64> {
    let m = key.s.len() + 2;
    assert!(
        m <= corr.nrows(),
        "conditioning set too large: |S| = {} with p = {}",
        key.s.len(),
        corr.nrows()
    );
    let mut idx = Vec::with_capacity(m);
    idx.push(key.i);
    idx.push(key.j);
    idx.extend_from_slice(&key.s);

    let mut sub = DMatrix::zeros(m, m);
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            sub[(a, b)] = corr[(ia, ib)];
        }
    }

    let chol = Cholesky::new(sub)
        .ok_or_else(|| Error::SingularSubmatrix(format!("correlation submatrix at {key}")))?;

    // Cheap reciprocal-condition estimate from the Cholesky diagonal.
    let diag = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for a in 0..m {
        let d = diag[(a, a)];
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if !(dmin / dmax).is_finite() || (dmin / dmax).powi(2) < RCOND_MIN {
        return Err(Error::SingularSubmatrix(format!(
            "correlation submatrix at {key} is ill-conditioned"
        )));
    }

    // Only the 2×2 corner of the inverse is needed.
    let mut e0 = DVector::zeros(m);
    e0[0] = 1.0;
    let x0 = chol.solve(&e0);
    let om_ii = x0[0];
    let om_ij = x0[1];
    let mut e1 = DVector::zeros(m);
    e1[1] = 1.0;
    let om_jj = chol.solve(&e1)[1];

    if !(om_ii > 0.0 && om_jj > 0.0) {
        return Err(Error::SingularSubmatrix(format!(
            "non-positive precision diagonal at {key}"
        )));
    }
    let rho = -om_ij / (om_ii * om_jj).sqrt();
    Ok(rho.clamp(-(1.0 - CLAMP_EPS), 1.0 - CLAMP_EPS))
}

/// Empirical partial correlation ρ̂ of the tested pair given the
/// conditioning set. Requires |S| ≤ p − 2.
pub fn partial_correlation(stats: &SuffStats, key: &CiKey) -> Result<f64> {
    partial_correlation_of(stats.corr(), key)
}

/// Fisher-z conditional independence test.
///
/// Computes Z = atanh(ρ̂) = ½ ln((1+ρ̂)/(1−ρ̂)) and rejects independence
/// (returns `true`, "dependent") iff √(n − |S| − 3) · |Z| exceeds the
/// two-sided normal quantile Φ⁻¹(1 − α/2).
///
/// When n − |S| − 3 ≤ 0 the sample cannot support the test and the edge is
/// conservatively declared dependent.
pub fn fisher_z_test(stats: &SuffStats, key: &CiKey, alpha: f64) -> Result<bool> {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
    let crit = normal_quantile(1.0 - alpha / 2.0);
    fisher_z_with_crit(stats, key, crit)
}

fn fisher_z_with_crit(stats: &SuffStats, key: &CiKey, crit: f64) -> Result<bool> {
    let df = stats.n() as f64 - key.conditioning().len() as f64 - 3.0;
    if df <= 0.0 {
        return Ok(true);
    }
    let rho = partial_correlation(stats, key)?;
    let z = rho.atanh();
    Ok(df.sqrt() * z.abs() > crit)
}

/// Φ⁻¹ for the standard normal.
pub(crate) fn normal_quantile(q: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(q)
}

/// Memoized CI outcomes at a fixed level α. `true` means the test rejected
/// independence, i.e. the pair is treated as dependent.
#[derive(Debug, Clone)]
pub struct CiCache {
    alpha: f64,
    crit: f64,
    entries: HashMap<CiKey, bool>,
    queries: u64,
}

impl CiCache {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
        CiCache {
            alpha,
            crit: normal_quantile(1.0 - alpha / 2.0),
            entries: HashMap::new(),
            queries: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of distinct keys resolved so far.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total queries served, cache hits included.
    pub fn query_count(&self) -> u64 {
        self.queries
    }

    /// Returns the cached outcome for `key`, running the Fisher-z test on
    /// a miss. Deterministic for a fixed dataset and α.
    pub fn ci_query(&mut self, stats: &SuffStats, key: &CiKey) -> Result<bool> {
        self.queries += 1;
        if let Some(&hit) = self.entries.get(key) {
            return Ok(hit);
        }
        let outcome = fisher_z_with_crit(stats, key, self.crit)?;
        self.entries.insert(key.clone(), outcome);
        Ok(outcome)
    }

    /// Inserts a precomputed outcome, e.g. from a population oracle.
    pub fn insert(&mut self, key: CiKey, dependent: bool) {
        self.entries.insert(key, dependent);
    }
}

/// Anything that can answer "are i and j dependent given S?".
///
/// The sampler and the I-MAP builders are generic over this so tests can
/// swap the finite-sample Fisher-z tester for an exact population oracle.
pub trait CiTester {
    /// Number of variables queries may index.
    fn p(&self) -> usize;
    /// `true` iff the pair is dependent given the conditioning set.
    fn dependent(&mut self, key: &CiKey) -> Result<bool>;
    /// Total queries served so far.
    fn query_count(&self) -> u64;
}

/// The standard tester: sample statistics plus a [`CiCache`].
pub struct SampleCi<'a> {
    pub stats: &'a SuffStats,
    pub cache: &'a mut CiCache,
}

impl CiTester for SampleCi<'_> {
    fn p(&self) -> usize {
        self.stats.p()
    }

    fn dependent(&mut self, key: &CiKey) -> Result<bool> {
        self.cache.ci_query(self.stats, key)
    }

    fn query_count(&self) -> u64 {
        self.cache.query_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_suffstats, Dataset};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn stats_from(corr: DMatrix<f64>, n: usize) -> SuffStats {
        SuffStats::from_correlation(corr, n).unwrap()
    }

    #[test]
    fn identity_matrix_gives_zero_everywhere() {
        let stats = stats_from(DMatrix::identity(4, 4), 100);
        for (i, j, s) in [(0, 1, vec![]), (0, 3, vec![1]), (1, 2, vec![0, 3])] {
            let rho = partial_correlation(&stats, &CiKey::new(i, j, s)).unwrap();
            assert_abs_diff_eq!(rho, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn empty_conditioning_set_reduces_to_pearson() {
        let mut corr = DMatrix::identity(3, 3);
        corr[(0, 1)] = 0.42;
        corr[(1, 0)] = 0.42;
        corr[(1, 2)] = -0.17;
        corr[(2, 1)] = -0.17;
        let stats = stats_from(corr, 50);
        let rho = partial_correlation(&stats, &CiKey::new(0, 1, [])).unwrap();
        assert_abs_diff_eq!(rho, 0.42, epsilon = 1e-14);
        let rho = partial_correlation(&stats, &CiKey::new(2, 1, [])).unwrap();
        assert_abs_diff_eq!(rho, -0.17, epsilon = 1e-14);
    }

    #[test]
    fn chain_population_partial_correlation_vanishes() {
        // X -> Y -> Z with unit weights and unit noise: Cov rows
        // [[1,1,1],[1,2,2],[1,2,3]]. Given Y, the ends are independent.
        let cov: DMatrix<f64> =
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 3.0]);
        let mut corr: DMatrix<f64> = DMatrix::identity(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                corr[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            }
        }
        let stats = stats_from(corr, 1000);
        let rho = partial_correlation(&stats, &CiKey::new(0, 2, [1])).unwrap();
        assert!(rho.abs() < 1e-10, "expected vanishing partial correlation, got {rho}");
        // and marginally they are strongly dependent
        let marginal = partial_correlation(&stats, &CiKey::new(0, 2, [])).unwrap();
        assert!(marginal > 0.5);
    }

    #[test]
    fn partial_correlation_is_symmetric_and_clamped() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let p = 6;
        let vals: Vec<f64> = (0..n * p).map(|_| rng.gen::<f64>() - 0.5).collect();
        let data = Dataset::with_default_names(DMatrix::from_row_slice(n, p, &vals)).unwrap();
        let stats = compute_suffstats(&data).unwrap();
        for _ in 0..200 {
            let i = rng.gen_range(0..p);
            let mut j = rng.gen_range(0..p);
            while j == i {
                j = rng.gen_range(0..p);
            }
            let s: Vec<usize> = (0..p).filter(|&v| v != i && v != j && rng.gen_bool(0.4)).collect();
            let a = partial_correlation(&stats, &CiKey::new(i, j, s.clone())).unwrap();
            let b = partial_correlation(&stats, &CiKey::new(j, i, s)).unwrap();
            assert_eq!(a, b, "canonicalization must make order irrelevant");
            assert!(a.abs() <= 1.0 - CLAMP_EPS);
        }
    }

    #[test]
    fn collinear_submatrix_is_singular() {
        let mut corr = DMatrix::identity(3, 3);
        corr[(0, 1)] = 1.0;
        corr[(1, 0)] = 1.0;
        let stats = stats_from(corr, 100);
        let err = partial_correlation(&stats, &CiKey::new(0, 2, [1])).unwrap_err();
        assert!(matches!(err, Error::SingularSubmatrix(_)), "got {err:?}");
    }

    #[test]
    fn fisher_z_closed_form_case() {
        // ρ̂ = 0.5, n = 100, |S| = 0: Z = atanh(0.5) ≈ 0.5493,
        // statistic √97 · 0.5493 ≈ 5.41 > Φ⁻¹(0.975) ≈ 1.960.
        let mut corr = DMatrix::identity(2, 2);
        corr[(0, 1)] = 0.5;
        corr[(1, 0)] = 0.5;
        let stats = stats_from(corr, 100);
        assert!(fisher_z_test(&stats, &CiKey::new(0, 1, []), 0.05).unwrap());
        let z = 0.5f64.atanh();
        assert_abs_diff_eq!(z, 0.549306, epsilon = 1e-6);
        assert_abs_diff_eq!(97.0f64.sqrt() * z, 5.410, epsilon = 1e-3);
        // the same statistic is *not* significant at a much stricter level
        assert!(!fisher_z_test(&stats, &CiKey::new(0, 1, []), 1e-8).unwrap());
    }

    #[test]
    fn zero_correlation_never_rejects() {
        let stats = stats_from(DMatrix::identity(2, 2), 100);
        for alpha in [0.5, 0.05, 1e-4] {
            assert!(!fisher_z_test(&stats, &CiKey::new(0, 1, []), alpha).unwrap());
        }
    }

    #[test]
    fn degenerate_sample_size_declares_dependence() {
        let stats = stats_from(DMatrix::identity(10, 10), 10);
        // n − |S| − 3 = 10 − 8 − 3 < 0
        let key = CiKey::new(8, 9, 0..8);
        assert!(fisher_z_test(&stats, &key, 0.05).unwrap());
    }

    #[test]
    fn cache_is_idempotent_and_counts_queries() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 60;
        let p = 5;
        let vals: Vec<f64> = (0..n * p).map(|_| rng.gen::<f64>()).collect();
        let data = Dataset::with_default_names(DMatrix::from_row_slice(n, p, &vals)).unwrap();
        let stats = compute_suffstats(&data).unwrap();
        let mut cache = CiCache::new(0.05);
        let key = CiKey::new(1, 3, [0]);
        let first = cache.ci_query(&stats, &key).unwrap();
        let len_after_first = cache.len();
        let second = cache.ci_query(&stats, &key).unwrap();
        assert_eq!(first, second);
        assert_eq!(cache.len(), len_after_first, "repeat query must not grow the cache");
        assert_eq!(cache.query_count(), 2);
        // flipped pair canonicalizes to the same key
        let flipped = cache.ci_query(&stats, &CiKey::new(3, 1, [0])).unwrap();
        assert_eq!(flipped, first);
        assert_eq!(cache.len(), len_after_first);
    }

    #[test]
    fn cache_matches_direct_tests_on_random_keys() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 80;
        let p = 7;
        let vals: Vec<f64> = (0..n * p).map(|_| rng.gen::<f64>() - 0.5).collect();
        let data = Dataset::with_default_names(DMatrix::from_row_slice(n, p, &vals)).unwrap();
        let stats = compute_suffstats(&data).unwrap();
        let mut cache = CiCache::new(0.05);
        for _ in 0..1000 {
            let i = rng.gen_range(0..p);
            let mut j = rng.gen_range(0..p);
            while j == i {
                j = rng.gen_range(0..p);
            }
            let s: Vec<usize> = (0..p).filter(|&v| v != i && v != j && rng.gen_bool(0.3)).collect();
            let key = CiKey::new(i, j, s);
            let via_cache = cache.ci_query(&stats, &key).unwrap();
            let direct = fisher_z_test(&stats, &key, 0.05).unwrap();
            assert_eq!(via_cache, direct);
        }
    }
}
