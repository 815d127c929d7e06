//! Projection indices: scalar functionals of a projected score vector that
//! measure departure from gaussianity, each with a fixed optimization
//! orientation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EppError, Result};

/// The five supported projection indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    FriedmanTukey,
    Friedman,
    KurtosisMax,
    KurtosisMin,
    Discriminant,
}

/// Whether an index is interesting at large or at small values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Maximize,
    Minimize,
}

impl IndexKind {
    pub const ALL: [IndexKind; 5] = [
        IndexKind::FriedmanTukey,
        IndexKind::Friedman,
        IndexKind::KurtosisMax,
        IndexKind::KurtosisMin,
        IndexKind::Discriminant,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IndexKind::FriedmanTukey => "FriedmanTukey",
            IndexKind::Friedman => "Friedman",
            IndexKind::KurtosisMax => "KurtosisMax",
            IndexKind::KurtosisMin => "KurtosisMin",
            IndexKind::Discriminant => "Discriminant",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            IndexKind::FriedmanTukey | IndexKind::Friedman | IndexKind::KurtosisMax => {
                Orientation::Maximize
            }
            IndexKind::KurtosisMin | IndexKind::Discriminant => Orientation::Minimize,
        }
    }

    /// Resolve a name by unique case-insensitive prefix ("Fried" is enough
    /// for Friedman, but "F" is ambiguous with FriedmanTukey).
    pub fn parse(name: &str) -> Result<IndexKind> {
        resolve_prefix(name, &Self::ALL, |k| k.name())
    }
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Unique-prefix name resolution shared by index and algorithm lookup.
pub(crate) fn resolve_prefix<T: Copy>(
    given: &str,
    choices: &[T],
    name: impl Fn(&T) -> &'static str,
) -> Result<T> {
    let lower = given.to_lowercase();
    let matches: Vec<&T> = choices
        .iter()
        .filter(|c| name(c).to_lowercase().starts_with(&lower))
        .collect();
    // an exact name wins even when it prefixes another choice
    if let Some(exact) = choices.iter().find(|c| name(c).to_lowercase() == lower) {
        return Ok(*exact);
    }
    match matches.as_slice() {
        [one] => Ok(**one),
        _ if given.is_empty() => Err(name_error(given, choices, &name)),
        [] => Err(name_error(given, choices, &name)),
        _ => Err(name_error(given, choices, &name)),
    }
}

fn name_error<T>(given: &str, choices: &[T], name: &impl Fn(&T) -> &'static str) -> EppError {
    EppError::NameResolution {
        given: given.to_owned(),
        choices: choices.iter().map(name).collect::<Vec<_>>().join(", "),
    }
}

/// Fixed constants used by the indices: the Friedman-Tukey kernel bandwidth
/// rule h = 3.12 n^(-1/6), the Friedman polynomial degree m = 3 and the
/// exp(-d^2) discriminant weight.
#[derive(Debug, Clone, Copy)]
pub struct IndexConfig {
    ft_bandwidth_coeff: f64,
    friedman_degree: u32,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            ft_bandwidth_coeff: 3.12,
            friedman_degree: 3,
        }
    }
}

impl IndexConfig {
    /// Kernel bandwidth for a sample of size n.
    pub fn ft_bandwidth(&self, n: usize) -> f64 {
        self.ft_bandwidth_coeff * (n as f64).powf(-1.0 / 6.0)
    }

    pub fn friedman_degree(&self) -> u32 {
        self.friedman_degree
    }
}

/// Project the rows of `z` onto the unit direction `u`.
pub fn project(z: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != z.ncols() {
        return Err(EppError::DimensionMismatch {
            what: "direction length",
            expected: z.ncols(),
            actual: u.len(),
        });
    }
    if !crate::linalg::is_unit(u, 1e-8) {
        return Err(EppError::InvalidArgument(format!(
            "projection direction must be unit-norm, |u| = {}",
            u.norm()
        )));
    }
    Ok(z * u)
}

/// Shift and rescale scores to mean 0 and population standard deviation 1
/// (denominator n). Makes every index invariant to the location and scale of
/// the projection.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(EppError::InvalidData(
            "need at least 2 scores to normalize".into(),
        ));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-12 {
        return Err(EppError::DegenerateProjection);
    }
    Ok(scores.iter().map(|s| (s - mean) / sd).collect())
}

fn require_n2(scores: &[f64]) -> Result<()> {
    if scores.len() < 2 {
        return Err(EppError::InvalidData(format!(
            "index needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    Ok(())
}

/// Friedman-Tukey index: kernel double sum (1/(n^2 h)) sum_ij K((s_i-s_j)/h)
/// with K(x) = 35/32 (1-x^2)^3 on |x| <= 1, diagonal included.
pub fn index_friedman_tukey(scores: &[f64], cfg: &IndexConfig) -> Result<f64> {
    require_n2(scores)?;
    Ok(friedman_tukey_raw(scores, cfg))
}

fn friedman_tukey_raw(scores: &[f64], cfg: &IndexConfig) -> f64 {
    let n = scores.len();
    let h = cfg.ft_bandwidth(n);
    // sum over unordered pairs, then mirror; diagonal adds n * K(0)
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = (scores[i] - scores[j]) / h;
            if x.abs() <= 1.0 {
                acc += kernel(x);
            }
        }
    }
    (2.0 * acc + n as f64 * kernel(0.0)) / (n * n) as f64 / h
}

#[inline]
fn kernel(x: f64) -> f64 {
    let t = 1.0 - x * x;
    35.0 / 32.0 * t * t * t
}

/// Friedman index: sum_{j=1..m} ((2j+1)/2) [ mean_i L_j(2 Phi(s_i) - 1) ]^2
/// with Legendre polynomials L_j and m = 3. Non-negative.
pub fn index_friedman(scores: &[f64], cfg: &IndexConfig) -> Result<f64> {
    require_n2(scores)?;
    Ok(friedman_raw(scores, cfg))
}

fn friedman_raw(scores: &[f64], cfg: &IndexConfig) -> f64 {
    let n = scores.len() as f64;
    let degree = cfg.friedman_degree();
    debug_assert!(degree == 3, "legendre terms are hard-coded up to degree 3");
    let (mut m1, mut m2, mut m3) = (0.0, 0.0, 0.0);
    for &s in scores {
        let t = 2.0 * normal_cdf(s) - 1.0;
        m1 += t;
        m2 += (3.0 * t * t - 1.0) / 2.0;
        m3 += (5.0 * t * t * t - 3.0 * t) / 2.0;
    }
    m1 /= n;
    m2 /= n;
    m3 /= n;
    1.5 * m1 * m1 + 2.5 * m2 * m2 + 3.5 * m3 * m3
}

/// Kurtosis index: sum of fourth powers of the scores (a sum, not a mean).
pub fn index_kurtosis(scores: &[f64]) -> Result<f64> {
    require_n2(scores)?;
    Ok(scores.iter().map(|s| s.powi(4)).sum())
}

/// Discriminant index: exp(-d^2)-weighted mean of squared pairwise score
/// differences over i < j. Small values indicate tight within-group spread.
pub fn index_discriminant(scores: &[f64], _cfg: &IndexConfig) -> Result<f64> {
    require_n2(scores)?;
    let n = scores.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..(n - 1) {
        for j in (i + 1)..n {
            let d2 = (scores[i] - scores[j]).powi(2);
            let w = (-d2).exp();
            num += w * d2;
            den += w;
        }
    }
    Ok(num / den)
}

/// Standard normal cumulative distribution function, accurate to about 1e-15
/// relative via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// A raw index value together with the fitness an optimizer should maximize
/// (the value itself, or its negation for minimize-oriented indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluated {
    pub value: f64,
    pub fitness: f64,
}

/// Evaluate an index on (already normalized) scores and attach the fitness
/// for uniform maximization.
pub fn evaluate(kind: IndexKind, scores: &[f64], cfg: &IndexConfig) -> Result<Evaluated> {
    let value = match kind {
        IndexKind::FriedmanTukey => index_friedman_tukey(scores, cfg)?,
        IndexKind::Friedman => index_friedman(scores, cfg)?,
        IndexKind::KurtosisMax | IndexKind::KurtosisMin => index_kurtosis(scores)?,
        IndexKind::Discriminant => index_discriminant(scores, cfg)?,
    };
    let fitness = match kind.orientation() {
        Orientation::Maximize => value,
        Orientation::Minimize => -value,
    };
    Ok(Evaluated { value, fitness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const CFG: IndexConfig = IndexConfig {
        ft_bandwidth_coeff: 3.12,
        friedman_degree: 3,
    };

    #[test]
    fn parse_accepts_unique_prefixes() {
        assert_eq!(IndexKind::parse("KurtosisMa").unwrap(), IndexKind::KurtosisMax);
        assert_eq!(IndexKind::parse("kurtosismi").unwrap(), IndexKind::KurtosisMin);
        assert_eq!(IndexKind::parse("D").unwrap(), IndexKind::Discriminant);
        assert_eq!(IndexKind::parse("FriedmanT").unwrap(), IndexKind::FriedmanTukey);
        // exact name wins although it prefixes FriedmanTukey
        assert_eq!(IndexKind::parse("Friedman").unwrap(), IndexKind::Friedman);
        assert!(IndexKind::parse("Kurt").is_err());
        assert!(IndexKind::parse("F").is_err());
        assert!(IndexKind::parse("nonsense").is_err());
    }

    #[test]
    fn project_examples() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(project(&z, &e1).unwrap().as_slice(), &[1.0, 3.0]);
        let neg = DVector::from_vec(vec![-1.0, 0.0]);
        assert_eq!(project(&z, &neg).unwrap().as_slice(), &[-1.0, -3.0]);
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let s = project(&z, &u).unwrap();
        assert_abs_diff_eq!(s.as_slice(), [2.2, 5.0].as_slice(), epsilon = 1e-12);
        let bad = DVector::from_vec(vec![1.0, 1.0]);
        assert!(project(&z, &bad).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_scores(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(normalize_scores(&[2.0, 4.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(
            normalize_scores(&[5.0, 5.0, 5.0]),
            Err(EppError::DegenerateProjection)
        ));
    }

    #[test]
    fn friedman_tukey_two_zeros() {
        // all four kernel terms are K(0); oracle value computed directly
        let v = index_friedman_tukey(&[0.0, 0.0], &CFG).unwrap();
        assert_abs_diff_eq!(v, 0.39349130299306945, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.39352, epsilon = 1e-4);
    }

    #[test]
    fn friedman_tukey_only_diagonal_when_gaps_exceed_bandwidth() {
        let scores = [0.0, 10.0, 20.0]; // every pairwise gap > h
        let n = 3.0;
        let h = CFG.ft_bandwidth(3);
        let expected = n * kernel(0.0) / (n * n * h);
        assert_abs_diff_eq!(
            index_friedman_tukey(&scores, &CFG).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn friedman_tukey_decreases_as_cluster_spreads() {
        let h = CFG.ft_bandwidth(3);
        let tight = [-0.01, 0.0, 0.01];
        let spread = [-1.2 * h, 0.0, 1.2 * h];
        let vt = index_friedman_tukey(&tight, &CFG).unwrap();
        let vs = index_friedman_tukey(&spread, &CFG).unwrap();
        assert!(vt > vs, "{vt} <= {vs}");
    }

    #[test]
    fn friedman_single_zero_score() {
        // precondition n >= 2 relaxed: exercises the raw formula directly
        assert_abs_diff_eq!(friedman_raw(&[0.0], &CFG), 0.625, epsilon = 1e-12);
    }

    #[test]
    fn friedman_near_zero_on_normal_quantiles() {
        let n = 1000;
        let scores: Vec<f64> = (1..=n)
            .map(|i| inverse_normal_cdf((i as f64 - 0.5) / n as f64))
            .collect();
        let v = index_friedman(&scores, &CFG).unwrap();
        assert!(v < 0.005, "{v}");
    }

    #[test]
    fn friedman_antisymmetric_scores_keep_only_even_term() {
        let scores = [-1.7, -0.4, 0.4, 1.7];
        let n = scores.len() as f64;
        let mean_l2: f64 = scores
            .iter()
            .map(|&s| {
                let t = 2.0 * normal_cdf(s) - 1.0;
                (3.0 * t * t - 1.0) / 2.0
            })
            .sum::<f64>()
            / n;
        let expected = 2.5 * mean_l2 * mean_l2;
        assert_abs_diff_eq!(index_friedman(&scores, &CFG).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn kurtosis_examples() {
        assert_eq!(index_kurtosis(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 4.0);
        // normalized two-point mass attains the lower bound n
        let normalized = normalize_scores(&[3.0, 5.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(index_kurtosis(&normalized).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn kurtosis_of_gaussian_sample_near_3n() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 2000;
        let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let scores = normalize_scores(&raw).unwrap();
        let v = index_kurtosis(&scores).unwrap();
        let expected = 3.0 * n as f64;
        assert!((v - expected).abs() / expected < 0.10, "{v}");
    }

    #[test]
    fn discriminant_examples() {
        // single pair: weight cancels, value is the squared gap
        for delta in [0.1, 1.0, 7.5] {
            assert_abs_diff_eq!(
                index_discriminant(&[2.0, 2.0 + delta], &CFG).unwrap(),
                delta * delta,
                epsilon = 1e-12
            );
        }
        assert_eq!(index_discriminant(&[1.0, 1.0, 1.0], &CFG).unwrap(), 0.0);
        // pairs d^2 in {1,1,4}, weights {e^-1, e^-1, e^-4}
        let expected = (2.0 * (-1.0f64).exp() + 4.0 * (-4.0f64).exp())
            / (2.0 * (-1.0f64).exp() + (-4.0f64).exp());
        let v = index_discriminant(&[-1.0, 0.0, 1.0], &CFG).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(v, 1.0728666930377895, epsilon = 1e-12);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
        // quadrature oracle at a few points
        for x in [-3.0, -0.7, 0.3, 1.9, 4.2] {
            assert_abs_diff_eq!(normal_cdf(x), phi_quadrature(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluate_dispatch_and_orientation() {
        let scores = [1.0, -1.0, 1.0, -1.0];
        let max = evaluate(IndexKind::KurtosisMax, &scores, &CFG).unwrap();
        assert_eq!((max.value, max.fitness), (4.0, 4.0));
        let min = evaluate(IndexKind::KurtosisMin, &scores, &CFG).unwrap();
        assert_eq!((min.value, min.fitness), (4.0, -4.0));
        let disc = evaluate(IndexKind::Discriminant, &[-1.0, 0.0, 1.0], &CFG).unwrap();
        assert_abs_diff_eq!(disc.fitness, -1.0728666930377895, epsilon = 1e-12);
    }

    /// Simpson-rule integral of the standard normal density from 0 to x.
    fn phi_quadrature(x: f64) -> f64 {
        let steps = 20_000;
        let h = x / steps as f64;
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = density(0.0) + density(x);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * density(k as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    /// Bisection inverse of the cdf; oracle-only helper.
    fn inverse_normal_cdf(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        normalize_scores(&raw).unwrap()
    }

    #[test]
    fn translation_and_scale_invariance_through_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.random_range(5..40);
            let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let a: f64 = rng.random_range(0.1..5.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let shifted: Vec<f64> = raw.iter().map(|s| a * s + b).collect();
            let s1 = normalize_scores(&raw).unwrap();
            let s2 = normalize_scores(&shifted).unwrap();
            for kind in IndexKind::ALL {
                let v1 = evaluate(kind, &s1, &CFG).unwrap().value;
                let v2 = evaluate(kind, &s2, &CFG).unwrap().value;
                assert_abs_diff_eq!(v1, v2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn kurtosis_lower_bound_on_normalized_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            let scores = random_scores(&mut rng, n);
            assert!(index_kurtosis(&scores).unwrap() >= n as f64 - 1e-9);
        }
    }

    #[test]
    fn discriminant_bounded_by_extreme_pairwise_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(3..25);
            let scores = random_scores(&mut rng, n);
            let mut d2: Vec<f64> = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    d2.push((scores[i] - scores[j]).powi(2));
                }
            }
            let v = index_discriminant(&scores, &CFG).unwrap();
            let lo = d2.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..500, swap_a in 0usize..20, swap_b in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores = random_scores(&mut rng, 20);
            let mut permuted = scores.clone();
            permuted.swap(swap_a, swap_b);
            for kind in IndexKind::ALL {
                let v1 = evaluate(kind, &scores, &CFG).unwrap().value;
                let v2 = evaluate(kind, &permuted, &CFG).unwrap().value;
                prop_assert!((v1 - v2).abs() <= 1e-12 * v1.abs().max(1.0));
            }
        }

        #[test]
        fn friedman_is_nonnegative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..50);
            let scores = random_scores(&mut rng, n);
            prop_assert!(index_friedman(&scores, &CFG).unwrap() >= 0.0);
        }

        #[test]
        fn sign_flip_invariance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..30);
            let scores = random_scores(&mut rng, n);
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            for kind in IndexKind::ALL {
                let v1 = evaluate(kind, &scores, &CFG).unwrap().value;
                let v2 = evaluate(kind, &flipped, &CFG).unwrap().value;
                prop_assert!((v1 - v2).abs() <= 1e-10 * v1.abs().max(1.0));
            }
        }
    }
}
