//! Desk-scale simulation benchmark: rotated Gaussian mixtures, projection
//! pursuit pipelines against k-means/PCA baselines, adjusted Rand scoring
//! and timings.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::aggregate::{aggregate, DirectionSource, SelectMethod};
use crate::data::DataMatrix;
use crate::error::{EppError, Result};
use crate::indices::{IndexConfig, IndexKind};
use crate::linalg::sorted_symmetric_eigen;
use crate::optimize::{derive_run_seed, Algorithm, OptimizerParams, StoppingRule};
use crate::results::EppRun;

/// Three-population Gaussian mixture design, optionally rotated by a random
/// orthogonal matrix so the structure is not axis-aligned.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub sizes: (usize, usize, usize),
    pub means: [DVector<f64>; 3],
    pub cov_diag: DVector<f64>,
    pub rotate: bool,
    pub seed: u64,
}

impl MixtureSpec {
    fn with_sizes(sizes: (usize, usize, usize), seed: u64) -> Self {
        let p = 10;
        let mut mu = [DVector::zeros(p), DVector::zeros(p), DVector::zeros(p)];
        mu[0][0] = -1.0;
        mu[0][1] = -0.58;
        mu[1][0] = 1.0;
        mu[1][1] = -0.58;
        mu[2][1] = 1.15;
        let mut cov = DVector::from_element(p, 1.0);
        cov[0] = 0.1;
        cov[1] = 0.2;
        Self {
            sizes,
            means: mu,
            cov_diag: cov,
            rotate: true,
            seed,
        }
    }

    /// Equal cluster sizes 100/100/100.
    pub fn balanced(seed: u64) -> Self {
        Self::with_sizes((100, 100, 100), seed)
    }

    /// Cluster sizes 200/80/20.
    pub fn unbalanced(seed: u64) -> Self {
        Self::with_sizes((200, 80, 20), seed)
    }
}

/// Haar-distributed random orthogonal matrix via QR of a Gaussian matrix,
/// with the R factor's diagonal signs fixed positive.
pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gaussian.qr();
    let r_diag: Vec<f64> = (0..p).map(|i| qr.r()[(i, i)]).collect();
    let mut q = qr.q();
    for (j, d) in r_diag.iter().enumerate() {
        if *d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draw the mixture: rows from the three populations concatenated in order,
/// with 1-based class labels aligned to the rows.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<(DataMatrix, Vec<usize>)> {
    let p = spec.means[0].len();
    if spec.means.iter().any(|m| m.len() != p) || spec.cov_diag.len() != p {
        return Err(EppError::InvalidData("mixture dimensions disagree".into()));
    }
    let sizes = [spec.sizes.0, spec.sizes.1, spec.sizes.2];
    if sizes.iter().any(|&s| s == 0) {
        return Err(EppError::InvalidArgument("cluster sizes must be positive".into()));
    }
    let n: usize = sizes.iter().sum();
    let sd: Vec<f64> = spec.cov_diag.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for j in 0..p {
                values[(row, j)] =
                    spec.means[c][j] + sd[j] * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c + 1);
            row += 1;
        }
    }
    if spec.rotate {
        let q = random_orthogonal(p, derive_run_seed(spec.seed, usize::MAX / 2));
        values = values * q.transpose();
    }
    Ok((DataMatrix::new(values, None, None)?, labels))
}

fn squared_distance(x: &DMatrix<f64>, i: usize, b: &[f64]) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - b[j]).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` by
/// within-cluster sum of squares. An emptied cluster is re-seeded at the
/// point farthest from its assigned centroid.
pub fn kmeans(x: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(EppError::InvalidArgument(format!(
            "k = {k} must be in 1..={n}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_run_seed(seed, restart));
        let (wcss, labels) = lloyd(x, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
            best = Some((wcss, labels));
        }
    }
    Ok(best.unwrap().1)
}

fn lloyd(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let (n, p) = x.shape();
    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push(x.row(first).iter().cloned().collect());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(x, i, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.push(x.row(chosen).iter().cloned().collect());
        for i in 0..n {
            d2[i] = d2[i].min(squared_distance(x, i, centroids.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        // assignment
        let mut changed = false;
        for i in 0..n {
            let (mut arg, mut dist) = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(x, i, centroid);
                if d < dist {
                    dist = d;
                    arg = c;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        // update
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; p]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its current centroid becomes the seed
                let far = (0..n)
                    .max_by(|&a, &b| {
                        squared_distance(x, a, &centroids[labels[a]])
                            .partial_cmp(&squared_distance(x, b, &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = x.row(far).iter().cloned().collect();
                labels[far] = c;
                changed = true;
            } else {
                for j in 0..p {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let wcss: f64 = (0..n)
        .map(|i| squared_distance(x, i, &centroids[labels[i]]))
        .sum();
    (wcss, labels)
}

/// Hubert-Arabie adjusted Rand index between two labelings of the same rows.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EppError::DimensionMismatch {
            what: "label vectors",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    let mut cells: std::collections::HashMap<(usize, usize), f64> = std::collections::HashMap::new();
    let mut rows: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut cols: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    for i in 0..n {
        *cells.entry((a[i], b[i])).or_default() += 1.0;
        *rows.entry(a[i]).or_default() += 1.0;
        *cols.entry(b[i]).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_cells: f64 = cells.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_rows * sum_cols / choose2(n as f64);
    let maximum = 0.5 * (sum_rows + sum_cols);
    if (maximum - expected).abs() < f64::EPSILON {
        // both partitions put everything in one class
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (maximum - expected))
}

/// Scores on the first k principal components of the covariance (or, with
/// `use_correlation`, the correlation) matrix, plus the number of components
/// needed to explain at least 80% of the variance.
pub fn pca_scores(x: &DMatrix<f64>, use_correlation: bool, k: usize) -> Result<(DMatrix<f64>, usize)> {
    let (n, p) = x.shape();
    if k > p {
        return Err(EppError::InvalidArgument(format!("k = {k} exceeds p = {p}")));
    }
    if n < 2 {
        return Err(EppError::InvalidData("need at least 2 rows".into()));
    }
    let means = x.row_mean();
    let mut centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    if use_correlation {
        for j in 0..p {
            let sd = (centered.column(j).norm_squared() / (n - 1) as f64).sqrt();
            if sd < 1e-12 {
                return Err(EppError::InvalidData(format!(
                    "column {} has no variation; correlation PCA undefined",
                    j + 1
                )));
            }
            centered.column_mut(j).scale_mut(1.0 / sd);
        }
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let (eigenvalues, vectors) = sorted_symmetric_eigen(&cov);
    let total: f64 = eigenvalues.iter().filter(|&&l| l > 0.0).sum();
    let mut acc = 0.0;
    let mut l80 = p;
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        acc += lambda.max(0.0);
        if acc / total >= 0.80 {
            l80 = i + 1;
            break;
        }
    }
    let scores = centered * vectors.columns(0, k);
    Ok((scores, l80))
}

/// Which mixture design a benchmark repetition uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Balanced,
    Unbalanced,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Balanced => "balanced",
            Setting::Unbalanced => "unbalanced",
        }
    }

    fn spec(&self, seed: u64) -> MixtureSpec {
        match self {
            Setting::Balanced => MixtureSpec::balanced(seed),
            Setting::Unbalanced => MixtureSpec::unbalanced(seed),
        }
    }
}

/// Benchmark configuration, desk-scale by default (the full-scale study used
/// 1000 repetitions and 100 restarts; dial `reps`/`n_simu` up to match).
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub settings: Vec<Setting>,
    pub reps: usize,
    pub n_simu: usize,
    pub indices: Vec<IndexKind>,
    pub agg_methods: Vec<SelectMethod>,
    pub percentage: f64,
    pub maxiter: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            settings: vec![Setting::Balanced, Setting::Unbalanced],
            reps: 50,
            n_simu: 20,
            indices: vec![IndexKind::Friedman, IndexKind::KurtosisMin, IndexKind::KurtosisMax],
            agg_methods: vec![SelectMethod::Inverse, SelectMethod::Cumulative],
            percentage: 0.85,
            maxiter: 200,
            seed: 1,
        }
    }
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub setting: &'static str,
    pub rep: usize,
    /// Index name, "all", "fast", or a baseline ("kmeans-raw", "pca-1", ...).
    pub method: String,
    /// Aggregation method, or "none" for baselines.
    pub agg: String,
    pub k_chosen: Option<usize>,
    pub ari: f64,
    pub seconds: f64,
}

const KMEANS_RESTARTS: usize = 10;

/// Run the study: per repetition, fit every index with Tribes on sphered
/// data, score each aggregation (per index, all indices, and the fast pair
/// Friedman + KurtosisMin) by k-means/ARI against the truth, and score the
/// raw-data and PCA baselines.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut jobs = Vec::new();
    for &setting in &config.settings {
        for rep in 0..config.reps {
            jobs.push((setting, rep));
        }
    }
    let outcomes: Vec<Result<Vec<BenchRow>>> = jobs
        .par_iter()
        .map(|&(setting, rep)| run_rep(config, setting, rep))
        .collect();
    let mut rows = Vec::new();
    for outcome in outcomes {
        rows.extend(outcome?);
    }
    Ok(rows)
}

fn run_rep(config: &BenchConfig, setting: Setting, rep: usize) -> Result<Vec<BenchRow>> {
    let setting_tag = match setting {
        Setting::Balanced => 0x1000_0000usize,
        Setting::Unbalanced => 0x2000_0000usize,
    };
    let data_seed = derive_run_seed(config.seed, setting_tag + rep);
    let (data, truth) = gen_mixture(&setting.spec(data_seed))?;
    let stop = StoppingRule {
        maxiter: config.maxiter,
        ..StoppingRule::default()
    };
    let cfg = IndexConfig::default();
    let mut rows = Vec::new();

    // one run batch per index, timed
    let mut runs: Vec<(IndexKind, EppRun, f64)> = Vec::new();
    for (i, &kind) in config.indices.iter().enumerate() {
        let started = Instant::now();
        let params = OptimizerParams {
            algorithm: Algorithm::Tribe,
            seed: derive_run_seed(data_seed, i + 1),
            ..OptimizerParams::default()
        };
        let run = EppRun::fit(&data, true, kind, &cfg, &params, &stop, config.n_simu)?;
        runs.push((kind, run, started.elapsed().as_secs_f64()));
    }

    let centered = {
        let means = data.values().row_mean();
        DMatrix::from_fn(data.n(), data.p(), |i, j| data.values()[(i, j)] - means[j])
    };
    let score_combination =
        |name: String, members: Vec<&EppRun>, fit_seconds: f64, rows: &mut Vec<BenchRow>| -> Result<()> {
            for &method in &config.agg_methods {
                let started = Instant::now();
                let sources: Vec<DirectionSource> =
                    members.iter().map(|&r| DirectionSource::Run(r)).collect();
                let agg = aggregate(&sources, method, config.percentage)?;
                let projected = &centered * &agg.basis;
                let labels = kmeans(
                    &projected,
                    3,
                    KMEANS_RESTARTS,
                    derive_run_seed(data_seed, 0x3000_0000),
                )?;
                let ari = adjusted_rand(&truth, &labels)?;
                rows.push(BenchRow {
                    setting: setting.name(),
                    rep,
                    method: name.clone(),
                    agg: method.name().to_string(),
                    k_chosen: Some(agg.k),
                    ari,
                    seconds: fit_seconds + started.elapsed().as_secs_f64(),
                });
            }
            Ok(())
        };

    for (kind, run, seconds) in &runs {
        score_combination(kind.name().to_string(), vec![run], *seconds, &mut rows)?;
    }
    if runs.len() > 1 {
        let total: f64 = runs.iter().map(|(_, _, s)| s).sum();
        score_combination(
            "all".to_string(),
            runs.iter().map(|(_, r, _)| r).collect(),
            total,
            &mut rows,
        )?;
    }
    let fast: Vec<&EppRun> = runs
        .iter()
        .filter(|(k, _, _)| matches!(k, IndexKind::Friedman | IndexKind::KurtosisMin))
        .map(|(_, r, _)| r)
        .collect();
    if fast.len() == 2 {
        let fast_seconds: f64 = runs
            .iter()
            .filter(|(k, _, _)| matches!(k, IndexKind::Friedman | IndexKind::KurtosisMin))
            .map(|(_, _, s)| s)
            .sum();
        score_combination("fast".to_string(), fast, fast_seconds, &mut rows)?;
    }

    // baselines
    let kmeans_seed = derive_run_seed(data_seed, 0x4000_0000);
    let baseline = |name: &str, matrix: &DMatrix<f64>, k_chosen: Option<usize>, rows: &mut Vec<BenchRow>| -> Result<()> {
        let started = Instant::now();
        let labels = kmeans(matrix, 3, KMEANS_RESTARTS, kmeans_seed)?;
        let ari = adjusted_rand(&truth, &labels)?;
        rows.push(BenchRow {
            setting: setting.name(),
            rep,
            method: name.to_string(),
            agg: "none".to_string(),
            k_chosen,
            ari,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    baseline("kmeans-raw", data.values(), None, &mut rows)?;
    let (pc_all, l80) = pca_scores(data.values(), true, data.p())?;
    baseline("pca-1", &pc_all.columns(0, 1).clone_owned(), Some(1), &mut rows)?;
    baseline("pca-2", &pc_all.columns(0, 2).clone_owned(), Some(2), &mut rows)?;
    baseline("pca-80", &pc_all.columns(0, l80).clone_owned(), Some(l80), &mut rows)?;
    Ok(rows)
}
