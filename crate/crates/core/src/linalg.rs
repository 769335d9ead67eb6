//! Small dense linear-algebra helpers shared by the filter, the risk
//! estimator and the simulators.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Eigenvalue floor below which a covariance direction is treated as empty.
pub const EIGEN_CLAMP: f64 = 1e-14;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Checks symmetry and positive semi-definiteness of `m` within `tol`.
pub fn check_psd(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what}: non-finite entry")));
    }
    if !is_symmetric(m, tol) {
        return Err(invalid(format!("{what}: matrix is not symmetric")));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(invalid(format!(
            "{what}: not positive semi-definite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

pub fn check_psd2(m: &Matrix2<f64>, tol: f64, what: &str) -> Result<()> {
    check_psd(&DMatrix::from_column_slice(2, 2, m.as_slice()), tol, what)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric PSD matrix with eigenpairs ordered by
/// decreasing eigenvalue, eigenvalues clamped at zero, and each eigenvector
/// oriented so that its largest-magnitude component is positive.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        values.push(if lambda > EIGEN_CLAMP { lambda } else { 0.0 });
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Returns `S` with `S Sᵀ = m` for a symmetric PSD matrix (eigen square root,
/// negative eigenvalues clamped to zero).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, mut vectors) = sorted_eigen(m);
    for (j, lambda) in values.iter().enumerate() {
        let s = lambda.sqrt();
        vectors.column_mut(j).scale_mut(s);
    }
    vectors
}

/// Draws `factor · z` with `z` standard normal.
pub fn sample_gaussian<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}
