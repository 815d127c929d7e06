//! Combine many one-dimensional projection directions into one rank-k
//! averaged orthogonal projector with an automatically chosen rank.

use nalgebra::{DMatrix, DVector};

use crate::error::{EppError, Result};
use crate::indices::resolve_prefix;
use crate::linalg::{canonicalize_sign, sorted_symmetric_eigen};
use crate::results::EppRun;

/// Eigenvalues below this count as numerically zero when choosing k.
const EIGEN_ZERO: f64 = 1e-9;

/// Rank selection rule for the averaged projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMethod {
    /// Smallest k whose eigenvalue mass reaches the given fraction.
    Cumulative,
    /// Keep eigenvalues above the mean of the nonzero spectrum.
    Inverse,
    /// Keep eigenvalues whose square exceeds the mean of the squared
    /// nonzero spectrum.
    SqInverse,
}

impl SelectMethod {
    pub const ALL: [SelectMethod; 3] = [
        SelectMethod::Cumulative,
        SelectMethod::Inverse,
        SelectMethod::SqInverse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectMethod::Cumulative => "cumulative",
            SelectMethod::Inverse => "inverse",
            SelectMethod::SqInverse => "sq.inverse",
        }
    }

    pub fn parse(name: &str) -> Result<SelectMethod> {
        resolve_prefix(name, &Self::ALL, |m| m.name())
    }
}

impl std::fmt::Display for SelectMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A rank-k averaged projector P = O O^T with its orthonormal basis and the
/// full spectrum of the average the rank was chosen from.
#[derive(Debug, Clone)]
pub struct AggResult {
    /// p x p symmetric idempotent projector.
    pub projector: DMatrix<f64>,
    /// p x k orthonormal basis, columns sign-canonicalized.
    pub basis: DMatrix<f64>,
    pub k: usize,
    /// Eigenvalues of the averaged projector, descending.
    pub eigenvalues: DVector<f64>,
}

/// Mean of the rank-1 projectors u u^T over the given unit directions.
pub fn average_projector(directions: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let first = directions
        .first()
        .ok_or_else(|| EppError::InvalidArgument("no directions to average".into()))?;
    let p = first.len();
    let mut acc = DMatrix::zeros(p, p);
    for (i, u) in directions.iter().enumerate() {
        if u.len() != p {
            return Err(EppError::DimensionMismatch {
                what: "direction length",
                expected: p,
                actual: u.len(),
            });
        }
        if (u.norm() - 1.0).abs() > 1e-8 {
            return Err(EppError::InvalidArgument(format!(
                "direction {} is not unit-norm (|u| = {})",
                i + 1,
                u.norm()
            )));
        }
        acc.ger(1.0, u, u, 1.0);
    }
    acc /= directions.len() as f64;
    Ok(acc)
}

/// Choose the rank k from a descending spectrum.
///
/// Small negative eigenvalues (rounding noise from an eigen-solve) are
/// clamped to zero; a substantially negative spectrum is rejected.
pub fn select_k(eigenvalues: &[f64], method: SelectMethod, percentage: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(EppError::InvalidArgument("empty spectrum".into()));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(EppError::InvalidArgument(
            "eigenvalues must be sorted in descending order".into(),
        ));
    }
    let max = eigenvalues[0];
    if !(max > 0.0) {
        return Err(EppError::InvalidArgument("spectrum has no positive eigenvalue".into()));
    }
    if eigenvalues.iter().any(|&l| l < -0.01 * max) {
        return Err(EppError::InvalidArgument(
            "spectrum has a substantially negative eigenvalue".into(),
        ));
    }
    let lambda: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let r = lambda.iter().filter(|&&l| l > EIGEN_ZERO).count().max(1);
    let k = match method {
        SelectMethod::Cumulative => {
            if !(percentage > 0.0 && percentage <= 1.0) {
                return Err(EppError::InvalidArgument(
                    "percentage must be in (0, 1]".into(),
                ));
            }
            let total: f64 = lambda.iter().sum();
            let mut acc = 0.0;
            let mut k = lambda.len();
            for (i, l) in lambda.iter().enumerate() {
                acc += l;
                if acc / total >= percentage {
                    k = i + 1;
                    break;
                }
            }
            k
        }
        SelectMethod::Inverse => {
            let threshold = lambda.iter().sum::<f64>() / r as f64;
            lambda.iter().filter(|&&l| l > threshold).count()
        }
        SelectMethod::SqInverse => {
            let threshold = lambda.iter().map(|l| l * l).sum::<f64>() / r as f64;
            lambda.iter().filter(|&&l| l * l > threshold).count()
        }
    };
    Ok(k.clamp(1, r))
}

/// A source of directions to combine: a fitted run (directions are mapped to
/// original variable coordinates first, so runs with different preprocessing
/// combine coherently) or a raw list of unit vectors already in a common
/// space.
pub enum DirectionSource<'a> {
    Run(&'a EppRun),
    Directions(&'a [DVector<f64>]),
}

impl<'a> From<&'a EppRun> for DirectionSource<'a> {
    fn from(run: &'a EppRun) -> Self {
        DirectionSource::Run(run)
    }
}

/// Average the rank-1 projectors of every direction from every source,
/// eigen-decompose, choose k and return the projector with its basis.
pub fn aggregate(
    sources: &[DirectionSource<'_>],
    method: SelectMethod,
    percentage: f64,
) -> Result<AggResult> {
    let mut directions: Vec<DVector<f64>> = Vec::new();
    for source in sources {
        match source {
            DirectionSource::Run(run) => {
                for record in run.records() {
                    directions.push(run.preprocessor().to_original_coords(&record.direction)?);
                }
            }
            DirectionSource::Directions(list) => {
                directions.extend(list.iter().cloned());
            }
        }
    }
    let average = average_projector(&directions)?;
    let (eigenvalues, vectors) = sorted_symmetric_eigen(&average);
    let k = select_k(eigenvalues.as_slice(), method, percentage)?;
    let mut basis = DMatrix::zeros(average.nrows(), k);
    for j in 0..k {
        let mut col = vectors.column(j).clone_owned();
        canonicalize_sign(&mut col);
        basis.set_column(j, &col);
    }
    let projector = &basis * basis.transpose();
    Ok(AggResult {
        projector,
        basis,
        k,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        v / n
    }

    #[test]
    fn average_of_two_axes() {
        let p = average_projector(&[unit(vec![1.0, 0.0, 0.0]), unit(vec![0.0, 1.0, 0.0])]).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 0.0]));
        assert_abs_diff_eq!(p.as_slice(), expected.as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn average_of_copies_is_rank_one() {
        let u = unit(vec![3.0, -1.0, 2.0]);
        let p = average_projector(&vec![u.clone(); 7]).unwrap();
        let expected = &u * u.transpose();
        assert_abs_diff_eq!(p.as_slice(), expected.as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn sign_flips_leave_average_unchanged() {
        let a = unit(vec![1.0, 2.0, -1.0]);
        let b = unit(vec![0.5, -1.0, 3.0]);
        let p1 = average_projector(&[a.clone(), b.clone()]).unwrap();
        let p2 = average_projector(&[-a, b]).unwrap();
        assert_abs_diff_eq!(p1.as_slice(), p2.as_slice(), epsilon = 1e-14);
    }

    #[test]
    fn select_k_cumulative_examples() {
        let lambda = [0.5, 0.3, 0.2];
        assert_eq!(select_k(&lambda, SelectMethod::Cumulative, 0.8).unwrap(), 2);
        assert_eq!(select_k(&lambda, SelectMethod::Cumulative, 0.85).unwrap(), 3);
        // c = 1 returns the count of nonzero eigenvalues
        assert_eq!(select_k(&[0.7, 0.3, 0.0], SelectMethod::Cumulative, 1.0).unwrap(), 2);
    }

    #[test]
    fn select_k_inverse_example() {
        // r = 4, mean 0.25; only 0.6 exceeds it (0.25 is not strictly above)
        assert_eq!(
            select_k(&[0.6, 0.25, 0.1, 0.05], SelectMethod::Inverse, 0.85).unwrap(),
            1
        );
    }

    #[test]
    fn select_k_rejects_bad_spectra() {
        assert!(select_k(&[], SelectMethod::Inverse, 0.85).is_err());
        assert!(select_k(&[1.0, -0.5], SelectMethod::Inverse, 0.85).is_err());
        assert!(select_k(&[0.3, 0.5], SelectMethod::Inverse, 0.85).is_err());
        assert!(select_k(&[0.0, 0.0], SelectMethod::Inverse, 0.85).is_err());
        assert!(select_k(&[0.5, 0.5], SelectMethod::Cumulative, 0.0).is_err());
    }

    #[test]
    fn method_names_parse_by_prefix() {
        assert_eq!(SelectMethod::parse("cum").unwrap(), SelectMethod::Cumulative);
        assert_eq!(SelectMethod::parse("inverse").unwrap(), SelectMethod::Inverse);
        assert_eq!(SelectMethod::parse("sq").unwrap(), SelectMethod::SqInverse);
        assert!(SelectMethod::parse("q").is_err());
    }

    #[test]
    fn identical_directions_aggregate_to_rank_one() {
        let u = unit(vec![1.0, -2.0, 0.5, 0.0]);
        let list = vec![u.clone(); 400];
        let agg = aggregate(
            &[DirectionSource::Directions(&list)],
            SelectMethod::Inverse,
            0.85,
        )
        .unwrap();
        assert_eq!(agg.k, 1);
        let mut expected = u.clone();
        canonicalize_sign(&mut expected);
        assert_abs_diff_eq!(agg.basis.column(0).as_slice(), expected.as_slice(), epsilon = 1e-10);
        let p = &expected * expected.transpose();
        assert_abs_diff_eq!(agg.projector.as_slice(), p.as_slice(), epsilon = 1e-10);
    }

    #[test]
    fn two_jittered_clusters_span_their_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut list = Vec::new();
        for i in 0..400 {
            let base: [f64; 4] = if i % 2 == 0 {
                [1.0, 0.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0, 0.0]
            };
            let mut v = DVector::from_row_slice(&base);
            for k in 0..4 {
                v[k] += 0.01 * rng.sample::<f64, _>(StandardNormal);
            }
            let n = v.norm();
            list.push(v / n);
        }
        let agg = aggregate(
            &[DirectionSource::Directions(&list)],
            SelectMethod::Inverse,
            0.85,
        )
        .unwrap();
        assert_eq!(agg.k, 2);
        // each basis vector lies within 2 degrees of the e1/e3 plane
        for j in 0..2 {
            let col = agg.basis.column(j);
            let in_plane = (col[0].powi(2) + col[2].powi(2)).sqrt().min(1.0);
            let angle = in_plane.acos().to_degrees();
            assert!(angle <= 2.0, "angle {angle}");
        }
    }

    #[test]
    fn projector_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let list: Vec<DVector<f64>> = (0..50)
            .map(|_| {
                let v = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                let n = v.norm();
                v / n
            })
            .collect();
        for method in SelectMethod::ALL {
            let agg = aggregate(&[DirectionSource::Directions(&list)], method, 0.85).unwrap();
            let p = &agg.projector;
            let p2 = p * p;
            assert_abs_diff_eq!(p2.as_slice(), p.as_slice(), epsilon = 1e-8);
            assert_abs_diff_eq!(p.trace(), agg.k as f64, epsilon = 1e-8);
            let gram = agg.basis.transpose() * &agg.basis;
            let identity = DMatrix::<f64>::identity(agg.k, agg.k);
            assert_abs_diff_eq!(gram.as_slice(), identity.as_slice(), epsilon = 1e-10);
            // rank-1 inputs: spectrum sums to one
            assert_abs_diff_eq!(agg.eigenvalues.sum(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn order_and_sign_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut list: Vec<DVector<f64>> = (0..30)
            .map(|_| {
                let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
                let n = v.norm();
                v / n
            })
            .collect();
        let a = aggregate(&[DirectionSource::Directions(&list)], SelectMethod::Cumulative, 0.85)
            .unwrap();
        list.reverse();
        for v in list.iter_mut().step_by(3) {
            v.neg_mut();
        }
        let b = aggregate(&[DirectionSource::Directions(&list)], SelectMethod::Cumulative, 0.85)
            .unwrap();
        assert_eq!(a.k, b.k);
        assert_abs_diff_eq!(a.projector.as_slice(), b.projector.as_slice(), epsilon = 1e-10);
    }

    #[test]
    fn perfect_rank_k_ensemble_recovers_subspace() {
        // directions spread uniformly in the e1-e2 plane; the average has the
        // exactly two-fold degenerate spectrum (1/2, 1/2, 0, 0), so rank
        // selection must use the cumulative rule (inverse is ill-posed when
        // the mean of the spectrum coincides with its entries)
        let list: Vec<DVector<f64>> = (0..100)
            .map(|i| {
                let angle = i as f64 * std::f64::consts::PI / 100.0;
                DVector::from_vec(vec![angle.cos(), angle.sin(), 0.0, 0.0])
            })
            .collect();
        let agg = aggregate(&[DirectionSource::Directions(&list)], SelectMethod::Cumulative, 0.85)
            .unwrap();
        assert_eq!(agg.k, 2);
        for j in 0..2 {
            let col = agg.basis.column(j);
            assert!(col[2].abs() < 1e-6 && col[3].abs() < 1e-6);
        }
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let list = vec![unit(vec![1.0, 0.0]), unit(vec![1.0, 0.0, 0.0])];
        assert!(average_projector(&list).is_err());
    }
}
