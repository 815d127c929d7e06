//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Flip the sign of `v` so that its largest-magnitude coordinate is positive.
///
/// `u` and `-u` define the same projection; reports and stored directions use
/// this canonical representative so output is deterministic.
pub fn canonicalize_sign(v: &mut DVector<f64>) {
    let mut idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

/// True if `v` has unit Euclidean norm within `tol`.
pub fn is_unit(v: &DVector<f64>, tol: f64) -> bool {
    (v.norm() - 1.0).abs() <= tol
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Eigenvectors are sign-canonicalized; exact eigenvalue
/// ties are broken by the first differing eigenvector coordinate so the
/// result does not depend on the backend's internal ordering.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let vectors: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut v = eig.eigenvectors.column(j).clone_owned();
            canonicalize_sign(&mut v);
            v
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then_with(|| {
                for k in 0..n {
                    let cmp = vectors[a][k].partial_cmp(&vectors[b][k]).unwrap();
                    if cmp != std::cmp::Ordering::Equal {
                        return cmp;
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let cols: Vec<DVector<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();
    (values, DMatrix::from_columns(&cols))
}
