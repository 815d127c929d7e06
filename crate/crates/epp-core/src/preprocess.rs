//! Centering, scaling and SVD whitening, with the fitted transform retained
//! for prediction and for mapping directions back to original coordinates.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::error::{EppError, Result};
use crate::linalg::canonicalize_sign;

/// Eigenvalue cutoff for the estimated rank when whitening.
pub const RANK_TOL: f64 = 1e-6;

/// Columns with sample standard deviation below this are treated as constant:
/// centered but left unscaled.
const DEGENERATE_SD: f64 = 1e-12;

/// A fitted centering/scaling (and optionally whitening) transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    center: DVector<f64>,
    scale: DVector<f64>,
    whitener: Option<DMatrix<f64>>, // p x r, applied after centering/scaling
    rank: usize,
    sphered: bool,
    degenerate_columns: Vec<usize>,
}

impl Preprocessor {
    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    /// The p x r whitening matrix, or `None` when the data was only
    /// standardized.
    pub fn whitener(&self) -> Option<&DMatrix<f64>> {
        self.whitener.as_ref()
    }

    /// Dimension of the transformed space (p when not sphered).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn sphered(&self) -> bool {
        self.sphered
    }

    /// Number of input columns the transform expects.
    pub fn input_dim(&self) -> usize {
        self.center.len()
    }

    /// Indices of columns that had (near-)zero standard deviation at fit time.
    pub fn degenerate_columns(&self) -> &[usize] {
        &self.degenerate_columns
    }

    /// Reassemble a transform from stored parts (used when loading run files).
    pub fn from_parts(
        center: DVector<f64>,
        scale: DVector<f64>,
        whitener: Option<DMatrix<f64>>,
        sphered: bool,
    ) -> Result<Self> {
        let p = center.len();
        if scale.len() != p {
            return Err(EppError::DimensionMismatch {
                what: "scale vector",
                expected: p,
                actual: scale.len(),
            });
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(EppError::InvalidData("scale entries must be positive".into()));
        }
        let rank = match &whitener {
            Some(w) => {
                if w.nrows() != p {
                    return Err(EppError::DimensionMismatch {
                        what: "whitener rows",
                        expected: p,
                        actual: w.nrows(),
                    });
                }
                w.ncols()
            }
            None => p,
        };
        if sphered != whitener.is_some() {
            return Err(EppError::InvalidData(
                "sphered flag inconsistent with whitener presence".into(),
            ));
        }
        Ok(Self {
            center,
            scale,
            whitener,
            rank,
            sphered,
            degenerate_columns: Vec::new(),
        })
    }

    /// Apply the stored transform to new rows; no refitting.
    pub fn transform(&self, xnew: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.input_dim();
        if xnew.ncols() != p {
            return Err(EppError::DimensionMismatch {
                what: "columns",
                expected: p,
                actual: xnew.ncols(),
            });
        }
        let mut z = xnew.clone();
        for j in 0..p {
            let (c, s) = (self.center[j], self.scale[j]);
            for v in z.column_mut(j).iter_mut() {
                *v = (*v - c) / s;
            }
        }
        Ok(match &self.whitener {
            Some(w) => &z * w,
            None => z,
        })
    }

    /// Map a unit direction `u` in the transformed space to a unit vector `a`
    /// on the original variables, such that projecting the centered raw data
    /// on `a` is proportional to projecting the transformed data on `u`.
    /// The result is sign-canonicalized.
    pub fn to_original_coords(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.rank {
            return Err(EppError::DimensionMismatch {
                what: "direction length",
                expected: self.rank,
                actual: u.len(),
            });
        }
        if (u.norm() - 1.0).abs() > 1e-8 {
            return Err(EppError::InvalidArgument(format!(
                "direction must be unit-norm, |u| = {}",
                u.norm()
            )));
        }
        let mut a = match &self.whitener {
            Some(w) => w * u,
            None => u.clone(),
        };
        for j in 0..a.len() {
            a[j] /= self.scale[j];
        }
        let norm = a.norm();
        if norm <= f64::MIN_POSITIVE.sqrt() {
            return Err(EppError::InvalidData(
                "direction maps to the zero vector in original coordinates".into(),
            ));
        }
        a /= norm;
        canonicalize_sign(&mut a);
        Ok(a)
    }
}

fn column_mean_sd(x: &DMatrix<f64>, j: usize) -> (f64, f64) {
    let n = x.nrows();
    let mean = x.column(j).sum() / n as f64;
    let ss: f64 = x.column(j).iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Center and scale every column to mean 0 and sample standard deviation 1
/// (denominator n-1). Constant columns are centered and left unscaled; their
/// indices are recorded on the returned [`Preprocessor`].
pub fn standardize(x: &DataMatrix) -> (DMatrix<f64>, Preprocessor) {
    let p = x.p();
    let mut center = DVector::zeros(p);
    let mut scale = DVector::from_element(p, 1.0);
    let mut degenerate = Vec::new();
    let mut z = x.values().clone();
    for j in 0..p {
        let (mean, sd) = column_mean_sd(x.values(), j);
        center[j] = mean;
        if sd < DEGENERATE_SD {
            degenerate.push(j);
            // centered only
            for v in z.column_mut(j).iter_mut() {
                *v -= mean;
            }
        } else {
            scale[j] = sd;
            for v in z.column_mut(j).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
    }
    (
        z,
        Preprocessor {
            center,
            scale,
            whitener: None,
            rank: p,
            sphered: false,
            degenerate_columns: degenerate,
        },
    )
}

/// Center, scale and whiten via singular value decomposition.
///
/// The rank is the number of covariance eigenvalues above `tol`; whitening
/// works for p > n, in which case the rank is at most n-1. The transformed
/// data has sample covariance I_r (denominator n-1).
pub fn whiten_svd(x: &DataMatrix, tol: f64) -> Result<(DMatrix<f64>, Preprocessor)> {
    let n = x.n();
    let (z_cs, pp) = standardize(x);
    let svd = z_cs.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let denom = (n - 1) as f64;

    // covariance eigenvalues are squared singular values / (n-1)
    let mut keep: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s * s / denom))
        .filter(|(_, lambda)| *lambda > tol)
        .collect();
    if keep.is_empty() {
        return Err(EppError::NoVariation);
    }
    keep.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let r = keep.len();

    let p = x.p();
    let mut whitener = DMatrix::zeros(p, r);
    for (col, &(i, lambda)) in keep.iter().enumerate() {
        let f = 1.0 / lambda.sqrt();
        for j in 0..p {
            whitener[(j, col)] = v_t[(i, j)] * f;
        }
    }
    let z = &z_cs * &whitener;
    Ok((
        z,
        Preprocessor {
            center: pp.center,
            scale: pp.scale,
            whitener: Some(whitener),
            rank: r,
            sphered: true,
            degenerate_columns: pp.degenerate_columns,
        },
    ))
}
