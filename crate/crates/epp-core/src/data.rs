//! Numeric data tables: ingestion, labels and fingerprinting.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{EppError, Result};

/// An n x p numeric table with row labels and column names.
///
/// Invariants enforced on construction: n >= 2, p >= 1, every entry finite,
/// row labels unique.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_labels: Vec<String>,
    col_names: Vec<String>,
}

impl DataMatrix {
    /// Build a table from a matrix and optional labels/names. Missing labels
    /// are synthesized as `obs<i>`, missing names as `V<j>` (1-based).
    pub fn new(
        values: DMatrix<f64>,
        row_labels: Option<Vec<String>>,
        col_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(EppError::InvalidData(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if p < 1 {
            return Err(EppError::InvalidData("need at least 1 column".into()));
        }
        if let Some((i, j)) = values
            .iter()
            .position(|x| !x.is_finite())
            .map(|k| (k % n, k / n))
        {
            return Err(EppError::InvalidData(format!(
                "non-finite value at row {}, column {}",
                i + 1,
                j + 1
            )));
        }
        let row_labels = match row_labels {
            Some(l) => {
                if l.len() != n {
                    return Err(EppError::DimensionMismatch {
                        what: "row labels",
                        expected: n,
                        actual: l.len(),
                    });
                }
                check_unique(&l)?;
                l
            }
            None => (1..=n).map(|i| format!("obs{i}")).collect(),
        };
        let col_names = match col_names {
            Some(c) => {
                if c.len() != p {
                    return Err(EppError::DimensionMismatch {
                        what: "column names",
                        expected: p,
                        actual: c.len(),
                    });
                }
                c
            }
            None => (1..=p).map(|j| format!("V{j}")).collect(),
        };
        Ok(Self {
            values,
            row_labels,
            col_names,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    /// Stable 64-bit fingerprint of dimensions, labels, names and values.
    ///
    /// FNV-1a over the raw bytes; used to detect when a run file is paired
    /// with a different data table than it was fitted on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.n() as u64);
        h.write_u64(self.p() as u64);
        for l in &self.row_labels {
            h.write_bytes(l.as_bytes());
            h.write_u8(0);
        }
        for c in &self.col_names {
            h.write_bytes(c.as_bytes());
            h.write_u8(0);
        }
        // row-major so the hash matches the CSV reading order
        for i in 0..self.n() {
            for j in 0..self.p() {
                h.write_u64(self.values[(i, j)].to_bits());
            }
        }
        h.finish()
    }
}

fn check_unique(labels: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(EppError::DuplicateLabel { label: l.clone() });
        }
    }
    Ok(())
}

/// Load a CSV file (RFC-4180-style, '.' decimal separator, UTF-8).
///
/// With `has_header`, the first record supplies column names. `label_column`
/// names a header column to use as row labels; the remaining columns must all
/// parse as finite reals.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    label_column: Option<&str>,
) -> Result<DataMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| wrap_csv(path, e))?;

    let mut header: Option<Vec<String>> = None;
    let mut label_idx: Option<usize> = None;
    if has_header {
        let hdr: Vec<String> = reader
            .headers()
            .map_err(|e| wrap_csv(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        if let Some(name) = label_column {
            label_idx = Some(hdr.iter().position(|h| h == name).ok_or_else(|| {
                EppError::InvalidData(format!("label column {name:?} not found in header"))
            })?);
        }
        header = Some(hdr);
    } else if label_column.is_some() {
        return Err(EppError::InvalidData(
            "label column requires a header row".into(),
        ));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| wrap_csv(path, e))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(cell.to_owned());
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| EppError::Parse {
                row: i + 1,
                column: column_name(&header, label_idx, j),
                message: format!("cannot parse {cell:?} as a real number"),
            })?;
            if !value.is_finite() {
                return Err(EppError::Parse {
                    row: i + 1,
                    column: column_name(&header, label_idx, j),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EppError::InvalidData(format!(
            "{} contains no data rows",
            path.display()
        )));
    }

    let p = rows[0].len();
    let n = rows.len();
    let values = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let col_names = header.map(|hdr| {
        hdr.into_iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_idx)
            .map(|(_, name)| name)
            .collect()
    });
    DataMatrix::new(values, (!labels.is_empty()).then_some(labels), col_names)
}

fn column_name(header: &Option<Vec<String>>, label_idx: Option<usize>, j: usize) -> String {
    match header {
        Some(h) => h[j].clone(),
        None => {
            // without a header the label column cannot exist
            debug_assert!(label_idx.is_none());
            format!("V{}", j + 1)
        }
    }
}

fn wrap_csv(path: &Path, e: csv::Error) -> EppError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => EppError::Io {
            path: path.to_owned(),
            source,
        },
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => EppError::InvalidData(format!(
            "unequal row lengths in {}: expected {expected_len} fields, got {len}{}",
            path.display(),
            pos.map(|p| format!(" at line {}", p.line())).unwrap_or_default()
        )),
        other => EppError::InvalidData(format!("csv error in {}: {other:?}", path.display())),
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
    fn write_u8(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u8(b);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}
