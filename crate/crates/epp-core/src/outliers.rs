//! Flag observations that are extreme along any found direction with a
//! location/scale rule, and summarize the flags across directions.

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{EppError, Result};
use crate::indices::{resolve_prefix, IndexKind};
use crate::optimize::Algorithm;
use crate::results::EppRun;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Mean,
    Median,
}

impl Location {
    pub const ALL: [Location; 2] = [Location::Mean, Location::Median];

    pub fn name(&self) -> &'static str {
        match self {
            Location::Mean => "mean",
            Location::Median => "median",
        }
    }

    pub fn parse(name: &str) -> Result<Location> {
        resolve_prefix(name, &Self::ALL, |l| l.name())
    }

    fn compute(&self, xs: &[f64]) -> f64 {
        match self {
            Location::Mean => stats::mean(xs),
            Location::Median => stats::median(xs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Sd,
    Mad,
}

impl Scale {
    pub const ALL: [Scale; 2] = [Scale::Sd, Scale::Mad];

    pub fn name(&self) -> &'static str {
        match self {
            Scale::Sd => "sd",
            Scale::Mad => "mad",
        }
    }

    pub fn parse(name: &str) -> Result<Scale> {
        resolve_prefix(name, &Self::ALL, |s| s.name())
    }

    fn compute(&self, xs: &[f64]) -> f64 {
        match self {
            Scale::Sd => stats::sample_sd(xs),
            Scale::Mad => stats::mad(xs),
        }
    }
}

/// Flagging rule: an observation is an outlier in a direction when its score
/// deviates from the location by more than `k` times the scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierConfig {
    pub k: f64,
    pub location: Location,
    pub scale: Scale,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            location: Location::Mean,
            scale: Scale::Sd,
        }
    }
}

/// Binary observation x direction flag table with its provenance.
#[derive(Debug, Clone)]
pub struct OutlierMatrix {
    /// flags[i][j]: observation i is extreme in direction j.
    flags: Vec<Vec<bool>>,
    row_labels: Vec<String>,
    config: OutlierConfig,
    index: IndexKind,
    algorithm: Algorithm,
    warnings: Vec<String>,
}

impl OutlierMatrix {
    pub fn n(&self) -> usize {
        self.flags.len()
    }

    /// Number of directions.
    pub fn m(&self) -> usize {
        self.flags.first().map_or(0, Vec::len)
    }

    pub fn flag(&self, row: usize, direction: usize) -> bool {
        self.flags[row][direction]
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn config(&self) -> &OutlierConfig {
        &self.config
    }

    pub fn index(&self) -> IndexKind {
        self.index
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Flag count per observation.
    pub fn frequencies(&self) -> Vec<usize> {
        self.flags
            .iter()
            .map(|row| row.iter().filter(|&&f| f).count())
            .collect()
    }
}

/// Per-direction flags on the scores of each column of `scores`.
fn flag_columns(scores: &DMatrix<f64>, cfg: &OutlierConfig) -> (Vec<Vec<bool>>, Vec<String>) {
    let (n, m) = scores.shape();
    let mut flags = vec![vec![false; m]; n];
    let mut warnings = Vec::new();
    for j in 0..m {
        let column: Vec<f64> = scores.column(j).iter().cloned().collect();
        let location = cfg.location.compute(&column);
        let scale = cfg.scale.compute(&column);
        if scale <= 0.0 {
            warnings.push(format!(
                "direction {}: scale is zero, nothing flagged",
                j + 1
            ));
            continue;
        }
        for i in 0..n {
            if (column[i] - location).abs() > cfg.k * scale {
                flags[i][j] = true;
            }
        }
    }
    (flags, warnings)
}

/// Flag outliers on the fitted scores of every direction of an in-memory run.
pub fn detect(run: &EppRun, cfg: &OutlierConfig) -> Result<OutlierMatrix> {
    if cfg.k <= 0.0 {
        return Err(EppError::InvalidArgument("k must be positive".into()));
    }
    let all: Vec<usize> = (1..=run.records().len()).collect();
    let scores = run.fitted(&all)?;
    let (flags, warnings) = flag_columns(&scores, cfg);
    Ok(OutlierMatrix {
        flags,
        row_labels: run.row_labels().to_vec(),
        config: *cfg,
        index: run.index(),
        algorithm: run.algorithm(),
        warnings,
    })
}

/// Like [`detect`] but recomputes scores from the supplied table, so it also
/// works for runs loaded from file. A fingerprint mismatch against the table
/// the run was fitted on is recorded as a warning.
pub fn detect_with_data(
    run: &EppRun,
    data: &DataMatrix,
    cfg: &OutlierConfig,
) -> Result<OutlierMatrix> {
    if cfg.k <= 0.0 {
        return Err(EppError::InvalidArgument("k must be positive".into()));
    }
    let all: Vec<usize> = (1..=run.records().len()).collect();
    let scores = run.predict(data.values(), &all)?;
    let (flags, mut warnings) = flag_columns(&scores, cfg);
    if !run.matches_data(data) {
        warnings.insert(
            0,
            "data fingerprint differs from the table this run was fitted on".into(),
        );
    }
    Ok(OutlierMatrix {
        flags,
        row_labels: data.row_labels().to_vec(),
        config: *cfg,
        index: run.index(),
        algorithm: run.algorithm(),
        warnings,
    })
}

/// One flagged observation in a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierEntry {
    pub label: String,
    /// Number of directions the observation is flagged in.
    pub frequency: usize,
    /// 100 * frequency / number of directions.
    pub percentage: f64,
}

/// Totals and per-observation flag counts, in input row order.
#[derive(Debug, Clone)]
pub struct OutlierSummary {
    pub total: usize,
    pub entries: Vec<OutlierEntry>,
    pub index: IndexKind,
    pub algorithm: Algorithm,
    pub config: OutlierConfig,
}

pub fn summarize(om: &OutlierMatrix) -> OutlierSummary {
    let m = om.m();
    let entries: Vec<OutlierEntry> = om
        .frequencies()
        .into_iter()
        .enumerate()
        .filter(|&(_, freq)| freq > 0)
        .map(|(i, frequency)| OutlierEntry {
            label: om.row_labels[i].clone(),
            frequency,
            percentage: 100.0 * frequency as f64 / m as f64,
        })
        .collect();
    OutlierSummary {
        total: entries.len(),
        entries,
        index: om.index,
        algorithm: om.algorithm,
        config: om.config,
    }
}

impl std::fmt::Display for OutlierSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Outlier Summary")?;
        writeln!(f, "-----------------------")?;
        writeln!(f, "Index name       : {}", self.index)?;
        writeln!(f, "Algorithm used   : {}", self.algorithm)?;
        writeln!(f, "Location used    : {}", self.config.location.name())?;
        writeln!(f, "Scale used       : {}", self.config.scale.name())?;
        writeln!(f, "k value used     : {}", trim_float(self.config.k))?;
        writeln!(f, "-----------------------")?;
        writeln!(f)?;
        writeln!(f, "Number of outliers detected:")?;
        writeln!(f, " {}", self.total)?;
        if self.entries.is_empty() {
            return Ok(());
        }
        writeln!(f)?;
        writeln!(f, "Observations considered outliers:")?;
        for (c, chunk) in self.entries.chunks(6).enumerate() {
            if c > 0 {
                writeln!(f)?;
            }
            let labels: Vec<String> = chunk.iter().map(|e| e.label.clone()).collect();
            let freqs: Vec<String> = chunk.iter().map(|e| e.frequency.to_string()).collect();
            let pcts: Vec<String> = chunk.iter().map(|e| trim_float(e.percentage)).collect();
            let widths: Vec<usize> = labels
                .iter()
                .zip(&freqs)
                .zip(&pcts)
                .map(|((l, q), p)| l.len().max(q.len()).max(p.len()))
                .collect();
            write_row(f, "OutlierID:  ", &labels, &widths)?;
            write_row(f, "Frequency:  ", &freqs, &widths)?;
            write_row(f, "Percentage: ", &pcts, &widths)?;
        }
        Ok(())
    }
}

fn write_row(
    f: &mut std::fmt::Formatter<'_>,
    head: &str,
    cells: &[String],
    widths: &[usize],
) -> std::fmt::Result {
    write!(f, "{head}")?;
    for (cell, width) in cells.iter().zip(widths) {
        write!(f, "{cell:<width$} ")?;
    }
    writeln!(f)
}

fn trim_float(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.1}")
    }
}

/// Long-format flag table for plotting: (label, direction, flag), optionally
/// restricted to observations flagged at least once.
pub fn plot_data(om: &OutlierMatrix, only_outliers: bool) -> Vec<(String, usize, bool)> {
    let freqs = om.frequencies();
    let mut out = Vec::new();
    for i in 0..om.n() {
        if only_outliers && freqs[i] == 0 {
            continue;
        }
        for j in 0..om.m() {
            out.push((om.row_labels[i].clone(), j + 1, om.flags[i][j]));
        }
    }
    out
}

/// Labels of rows falling outside the Tukey fences
/// [Q1 - 1.5 IQR, Q3 + 1.5 IQR] in at least one column (linear-interpolation
/// quartiles), in input row order.
pub fn tukey_marginal_outliers(x: &DataMatrix) -> Result<Vec<String>> {
    if x.n() < 4 {
        return Err(EppError::InvalidData(
            "need at least 4 observations for Tukey fences".into(),
        ));
    }
    let mut flagged = vec![false; x.n()];
    for j in 0..x.p() {
        let mut sorted: Vec<f64> = x.values().column(j).iter().cloned().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = stats::quantile_sorted(&sorted, 0.25);
        let q3 = stats::quantile_sorted(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        for i in 0..x.n() {
            let v = x.values()[(i, j)];
            if v < lo || v > hi {
                flagged[i] = true;
            }
        }
    }
    Ok(x.row_labels()
        .iter()
        .zip(&flagged)
        .filter(|(_, &f)| f)
        .map(|(l, _)| l.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn matrix_from(
        scores: DMatrix<f64>,
        cfg: OutlierConfig,
    ) -> OutlierMatrix {
        let (flags, warnings) = flag_columns(&scores, &cfg);
        OutlierMatrix {
            row_labels: (1..=scores.nrows()).map(|i| format!("obs{i}")).collect(),
            flags,
            config: cfg,
            index: IndexKind::KurtosisMax,
            algorithm: Algorithm::Tribe,
            warnings,
        }
    }

    #[test]
    fn single_extreme_row_is_the_only_flag() {
        let n = 50;
        let mut scores = DVector::zeros(n);
        // zero-mean column with spread, one point far out
        for i in 0..(n - 1) {
            scores[i] = if i % 2 == 0 { 0.5 } else { -0.5 };
        }
        let sd = stats::sample_sd(scores.as_slice());
        scores[n - 1] = 10.0 * sd;
        let om = matrix_from(
            DMatrix::from_column_slice(n, 1, scores.as_slice()),
            OutlierConfig { k: 5.0, ..Default::default() },
        );
        let freqs = om.frequencies();
        assert_eq!(freqs[n - 1], 1);
        assert_eq!(freqs.iter().sum::<usize>(), 1);
    }

    #[test]
    fn constant_scores_flag_nothing_and_warn() {
        let om = matrix_from(
            DMatrix::from_element(10, 2, 3.5),
            OutlierConfig::default(),
        );
        assert_eq!(om.frequencies().iter().sum::<usize>(), 0);
        assert_eq!(om.warnings().len(), 2);
    }

    #[test]
    fn summary_counts_and_percentages() {
        // hand 3x4 flag table
        let flags = vec![
            vec![true, false, true, false],
            vec![false, false, false, false],
            vec![true, true, true, true],
        ];
        let om = OutlierMatrix {
            flags,
            row_labels: vec!["a".into(), "b".into(), "c".into()],
            config: OutlierConfig::default(),
            index: IndexKind::KurtosisMax,
            algorithm: Algorithm::Tribe,
            warnings: vec![],
        };
        let s = summarize(&om);
        assert_eq!(s.total, 2);
        assert_eq!(s.entries[0].label, "a");
        assert_eq!(s.entries[0].frequency, 2);
        assert_eq!(s.entries[0].percentage, 50.0);
        assert_eq!(s.entries[1].label, "c");
        assert_eq!(s.entries[1].frequency, 4);
        assert_eq!(s.entries[1].percentage, 100.0);
        let text = s.to_string();
        assert!(text.contains("OutlierID"), "{text}");
        assert!(text.contains("Frequency"), "{text}");
    }

    #[test]
    fn zero_matrix_summary_empty() {
        let om = matrix_from(
            DMatrix::from_fn(6, 3, |i, j| ((i + j) % 2) as f64),
            OutlierConfig { k: 50.0, ..Default::default() },
        );
        let s = summarize(&om);
        assert_eq!(s.total, 0);
        assert!(s.entries.is_empty());
        assert!(plot_data(&om, true).is_empty());
        assert_eq!(plot_data(&om, false).len(), 18);
    }

    #[test]
    fn plot_data_filtered_count() {
        let flags = vec![
            vec![true, false],
            vec![false, false],
            vec![false, true],
        ];
        let om = OutlierMatrix {
            flags,
            row_labels: vec!["a".into(), "b".into(), "c".into()],
            config: OutlierConfig::default(),
            index: IndexKind::KurtosisMax,
            algorithm: Algorithm::Tribe,
            warnings: vec![],
        };
        assert_eq!(plot_data(&om, false).len(), 6);
        let filtered = plot_data(&om, true);
        assert_eq!(filtered.len(), 4); // 2 flagged rows x 2 directions
        assert_eq!(filtered[0].0, "a");
    }

    #[test]
    fn flags_invariant_under_affine_score_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scores = DMatrix::from_fn(60, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        for cfg in [
            OutlierConfig { k: 2.0, location: Location::Mean, scale: Scale::Sd },
            OutlierConfig { k: 2.0, location: Location::Median, scale: Scale::Mad },
        ] {
            let (base, _) = flag_columns(&scores, &cfg);
            let transformed = scores.map(|v| -3.7 * v + 11.0);
            let (after, _) = flag_columns(&transformed, &cfg);
            assert_eq!(base, after);
        }
    }

    #[test]
    fn increasing_k_never_adds_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let scores = DMatrix::from_fn(80, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let loose = flag_columns(&scores, &OutlierConfig { k: 1.0, ..Default::default() }).0;
        let tight = flag_columns(&scores, &OutlierConfig { k: 2.0, ..Default::default() }).0;
        for i in 0..80 {
            for j in 0..4 {
                assert!(!tight[i][j] || loose[i][j]);
            }
        }
    }

    #[test]
    fn gaussian_null_flag_rate_matches_tail_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 100_000;
        let scores = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cfg = OutlierConfig { k: 3.0, ..Default::default() };
        let (flags, _) = flag_columns(&scores, &cfg);
        let rate = flags.iter().filter(|r| r[0]).count() as f64 / n as f64;
        let expected = 2.0 * (1.0 - crate::indices::normal_cdf(3.0));
        assert!(
            (rate - expected).abs() / expected < 0.5,
            "rate {rate}, expected {expected}"
        );
    }

    #[test]
    fn tukey_flags_the_obvious_point() {
        let values = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 100.0]);
        let x = DataMatrix::new(values, None, None).unwrap();
        let out = tukey_marginal_outliers(&x).unwrap();
        assert_eq!(out, vec!["obs4".to_string()]);
    }

    #[test]
    fn tukey_typically_empty_for_tight_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        // clamp to +-2 sd: no value can exceed the fences for n = 20
        let values = DMatrix::from_fn(20, 1, |_, _| {
            rng.sample::<f64, _>(StandardNormal).clamp(-1.2, 1.2)
        });
        let x = DataMatrix::new(values, None, None).unwrap();
        assert!(tukey_marginal_outliers(&x).unwrap().is_empty());
    }
}
