//! A completed batch of optimizer runs: fitted scores, prediction,
//! original-space coefficients, report tables and JSON persistence.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{EppError, Result};
use crate::indices::{IndexConfig, IndexKind};
use crate::optimize::{run_many, Algorithm, OptimizerParams, RunRecord, StoppingRule};
use crate::preprocess::{standardize, whiten_svd, Preprocessor, RANK_TOL};
use crate::stats;

/// Version tag written into run files.
pub const RUN_FILE_VERSION: u32 = 1;

/// An ordered collection of converged directions plus everything needed to
/// reuse them: the fitted preprocessor, run metadata and (when fitted in this
/// process) the transformed training data.
#[derive(Debug, Clone)]
pub struct EppRun {
    records: Vec<RunRecord>,
    preprocessor: Preprocessor,
    index: IndexKind,
    algorithm: Algorithm,
    n_simu: usize,
    stopping: StoppingRule,
    seed: u64,
    data_fingerprint: u64,
    row_labels: Vec<String>,
    /// Training data in transformed coordinates; not persisted in run files.
    transformed: Option<DMatrix<f64>>,
}

impl EppRun {
    /// Standardize (or whiten, when `sphere`) the data, run `n_simu`
    /// optimizer restarts on the chosen index and collect the sorted result.
    pub fn fit(
        data: &DataMatrix,
        sphere: bool,
        kind: IndexKind,
        cfg: &IndexConfig,
        params: &OptimizerParams,
        stop: &StoppingRule,
        n_simu: usize,
    ) -> Result<EppRun> {
        let (z, preprocessor) = if sphere {
            whiten_svd(data, RANK_TOL)?
        } else {
            standardize(data)
        };
        let records = run_many(&z, kind, cfg, params, stop, n_simu)?;
        Ok(EppRun {
            records,
            preprocessor,
            index: kind,
            algorithm: params.algorithm,
            n_simu,
            stopping: *stop,
            seed: params.seed,
            data_fingerprint: data.fingerprint(),
            row_labels: data.row_labels().to_vec(),
            transformed: Some(z),
        })
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn index(&self) -> IndexKind {
        self.index
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn n_simu(&self) -> usize {
        self.n_simu
    }

    pub fn stopping(&self) -> &StoppingRule {
        &self.stopping
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn data_fingerprint(&self) -> u64 {
        self.data_fingerprint
    }

    /// True when `data` hashes to the fingerprint this run was fitted on.
    pub fn matches_data(&self, data: &DataMatrix) -> bool {
        data.fingerprint() == self.data_fingerprint
    }

    /// Warnings accumulated during the fit (currently: non-converged runs).
    pub fn warnings(&self) -> Vec<String> {
        let unconverged = self.records.iter().filter(|r| !r.converged).count();
        let mut out = Vec::new();
        if unconverged > 0 {
            out.push(format!(
                "{unconverged} of {} runs did not converge within maxiter = {}",
                self.records.len(),
                self.stopping.maxiter
            ));
        }
        out
    }

    /// Default directions to report: the first min(10, n_simu), 1-based.
    pub fn default_which(&self) -> Vec<usize> {
        (1..=self.records.len().min(10)).collect()
    }

    fn validate_which(&self, which: &[usize]) -> Result<()> {
        if which.is_empty() {
            return Err(EppError::InvalidArgument("empty direction selection".into()));
        }
        for &w in which {
            if w == 0 || w > self.records.len() {
                return Err(EppError::InvalidArgument(format!(
                    "direction {w} out of range 1..={}",
                    self.records.len()
                )));
            }
        }
        Ok(())
    }

    fn direction_matrix(&self, which: &[usize]) -> DMatrix<f64> {
        let r = self.preprocessor.rank();
        DMatrix::from_fn(r, which.len(), |i, j| {
            self.records[which[j] - 1].direction[i]
        })
    }

    /// Scores of the training data on the selected directions (column j is
    /// the projection onto direction `which[j]`).
    pub fn fitted(&self, which: &[usize]) -> Result<DMatrix<f64>> {
        self.validate_which(which)?;
        let z = self.transformed.as_ref().ok_or_else(|| {
            EppError::RunFile(
                "run was loaded from file and carries no training data; use predict with the original table".into(),
            )
        })?;
        Ok(z * self.direction_matrix(which))
    }

    /// Project new observations through the stored preprocessor onto the
    /// selected directions.
    pub fn predict(&self, newdata: &DMatrix<f64>, which: &[usize]) -> Result<DMatrix<f64>> {
        self.validate_which(which)?;
        let z = self.preprocessor.transform(newdata)?;
        Ok(z * self.direction_matrix(which))
    }

    /// Selected directions mapped to original variable coordinates, one unit
    /// column per selection.
    pub fn coef(&self, which: &[usize]) -> Result<DMatrix<f64>> {
        self.validate_which(which)?;
        let p = self.preprocessor.input_dim();
        let mut out = DMatrix::zeros(p, which.len());
        for (j, &w) in which.iter().enumerate() {
            let a = self
                .preprocessor
                .to_original_coords(&self.records[w - 1].direction)?;
            out.set_column(j, &a);
        }
        Ok(out)
    }

    /// Angles in degrees between the best direction and each selected one;
    /// sign-agnostic, in [0, 90].
    pub fn angles_to_best(&self, which: &[usize]) -> Result<Vec<f64>> {
        self.validate_which(which)?;
        let best = &self.records[0].direction;
        Ok(which
            .iter()
            .map(|&w| {
                let cos = best.dot(&self.records[w - 1].direction).abs().min(1.0);
                cos.acos().to_degrees()
            })
            .collect())
    }

    /// (run number, index value) pairs in stored best-first order.
    pub fn scree(&self, which: &[usize]) -> Result<Vec<(usize, f64)>> {
        self.validate_which(which)?;
        Ok(which
            .iter()
            .map(|&w| (w, self.records[w - 1].index_value))
            .collect())
    }

    /// Write the run as a self-describing JSON document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = RunFile::from(self);
        let mut out = serde_json::to_vec_pretty(&file)?;
        out.push(b'\n');
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|source| EppError::Io {
                path: path.to_owned(),
                source,
            })
    }

    /// Read a run file written by [`EppRun::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<EppRun> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| EppError::Io {
            path: path.to_owned(),
            source,
        })?;
        let file: RunFile = serde_json::from_slice(&bytes)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct PreprocessorFile {
    center: Vec<f64>,
    scale: Vec<f64>,
    /// p x rank, column-major; absent when the data was only standardized.
    whitener: Option<Vec<f64>>,
    rank: usize,
}

#[derive(Serialize, Deserialize)]
struct RunFile {
    format_version: u32,
    index: IndexKind,
    algorithm: Algorithm,
    sphered: bool,
    n_simu: usize,
    stopping: StoppingRule,
    seed: u64,
    preprocessor: PreprocessorFile,
    /// rank x n_simu, column-major.
    directions: Vec<f64>,
    values: Vec<f64>,
    iterations: Vec<usize>,
    converged: Vec<bool>,
    row_labels: Vec<String>,
    /// 64-bit hex.
    data_fingerprint: String,
}

impl From<&EppRun> for RunFile {
    fn from(run: &EppRun) -> Self {
        let pp = &run.preprocessor;
        let r = pp.rank();
        let m = run.records.len();
        let mut directions = Vec::with_capacity(r * m);
        for rec in &run.records {
            directions.extend_from_slice(rec.direction.as_slice());
        }
        RunFile {
            format_version: RUN_FILE_VERSION,
            index: run.index,
            algorithm: run.algorithm,
            sphered: pp.sphered(),
            n_simu: run.n_simu,
            stopping: run.stopping,
            seed: run.seed,
            preprocessor: PreprocessorFile {
                center: pp.center().as_slice().to_vec(),
                scale: pp.scale().as_slice().to_vec(),
                whitener: pp.whitener().map(|w| w.as_slice().to_vec()),
                rank: r,
            },
            directions,
            values: run.records.iter().map(|rec| rec.index_value).collect(),
            iterations: run.records.iter().map(|rec| rec.iterations).collect(),
            converged: run.records.iter().map(|rec| rec.converged).collect(),
            row_labels: run.row_labels.clone(),
            data_fingerprint: format!("{:016x}", run.data_fingerprint),
        }
    }
}

impl TryFrom<RunFile> for EppRun {
    type Error = EppError;

    fn try_from(file: RunFile) -> Result<EppRun> {
        if file.format_version != RUN_FILE_VERSION {
            return Err(EppError::RunFile(format!(
                "unsupported format_version {} (expected {})",
                file.format_version, RUN_FILE_VERSION
            )));
        }
        let p = file.preprocessor.center.len();
        let r = file.preprocessor.rank;
        let whitener = match file.preprocessor.whitener {
            Some(flat) => {
                if flat.len() != p * r {
                    return Err(EppError::RunFile(format!(
                        "whitener has {} entries, expected {p} x {r}",
                        flat.len()
                    )));
                }
                Some(DMatrix::from_column_slice(p, r, &flat))
            }
            None => None,
        };
        let preprocessor = Preprocessor::from_parts(
            DVector::from_vec(file.preprocessor.center),
            DVector::from_vec(file.preprocessor.scale),
            whitener,
            file.sphered,
        )?;
        let m = file.values.len();
        if file.directions.len() != r * m
            || file.iterations.len() != m
            || file.converged.len() != m
        {
            return Err(EppError::RunFile("inconsistent record lengths".into()));
        }
        let records = (0..m)
            .map(|j| RunRecord {
                direction: DVector::from_column_slice(&file.directions[j * r..(j + 1) * r]),
                index_value: file.values[j],
                iterations: file.iterations[j],
                converged: file.converged[j],
            })
            .collect();
        let data_fingerprint = u64::from_str_radix(&file.data_fingerprint, 16)
            .map_err(|_| EppError::RunFile("malformed data_fingerprint".into()))?;
        Ok(EppRun {
            records,
            preprocessor,
            index: file.index,
            algorithm: file.algorithm,
            n_simu: file.n_simu,
            stopping: file.stopping,
            seed: file.seed,
            data_fingerprint,
            row_labels: file.row_labels,
            transformed: None,
        })
    }
}

/// Kernel density estimate of the scores on a regular grid: Gaussian kernel,
/// Silverman bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5).
///
/// This report bandwidth/kernel is unrelated to the Friedman-Tukey index
/// kernel and must stay that way.
pub fn density_report(scores: &[f64], grid_size: usize) -> Result<Vec<(f64, f64)>> {
    if scores.len() < 2 {
        return Err(EppError::InvalidData("need at least 2 scores".into()));
    }
    if grid_size < 2 {
        return Err(EppError::InvalidArgument("grid_size must be at least 2".into()));
    }
    let n = scores.len();
    let sd = stats::sample_sd(scores);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => return Err(EppError::DegenerateProjection),
    };
    let h = 0.9 * spread * (n as f64).powf(-0.2);

    let (lo, hi) = (sorted[0] - 4.0 * h, sorted[n - 1] + 4.0 * h);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..grid_size)
        .map(|g| {
            let x = lo + g as f64 * step;
            let density = norm
                * scores
                    .iter()
                    .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
                    .sum::<f64>();
            (x, density)
        })
        .collect())
}

/// Equal-width histogram counts over [min, max]; the top edge is inclusive.
pub fn histogram_report(scores: &[f64], bins: usize) -> Result<Vec<(f64, f64, usize)>> {
    if scores.len() < 2 {
        return Err(EppError::InvalidData("need at least 2 scores".into()));
    }
    if bins == 0 {
        return Err(EppError::InvalidArgument("bins must be positive".into()));
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![(lo, hi, scores.len())]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let idx = (((s - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect())
}
