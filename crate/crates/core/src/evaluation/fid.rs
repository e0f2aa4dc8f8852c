use nalgebra::SymmetricEigen;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{covariance, sym_pow, symmetrize, to_dmatrix};

/// Frechet distance between Gaussians with the given moments.
pub fn fid_from_moments(mu_1: &Array1<f64>, sigma_1: &Array2<f64>, mu_2: &Array1<f64>, sigma_2: &Array2<f64>) -> Result<f64> {
    let d = mu_1.len();
    if mu_2.len() != d || sigma_1.dim() != (d, d) || sigma_2.dim() != (d, d) {
        return Err(Error::shape((d, d), sigma_2.dim()));
    }
    let s1 = to_dmatrix(sigma_1);
    let s2 = to_dmatrix(sigma_2);
    // Tr((S1 S2)^{1/2}) = Tr((S1^{1/2} S2 S1^{1/2})^{1/2}); the inner matrix
    // is symmetric positive semi-definite.
    let r = sym_pow(&s1, 0.5, 0.0);
    let inner = symmetrize(&(&r * &s2 * &r));
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean_term: f64 = mu_1.iter().zip(mu_2).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((mean_term + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

/// Frechet distance between Gaussian fits of two feature sets (rows are
/// samples).
pub fn fid(real: &Array2<f64>, generated: &Array2<f64>) -> Result<f64> {
    let d = real.ncols();
    if generated.ncols() != d {
        return Err(Error::shape(d, generated.ncols()));
    }
    for n in [real.nrows(), generated.nrows()] {
        if n < d + 1 {
            return Err(Error::InsufficientSamples { needed: d + 1, got: n });
        }
    }
    let (m1, s1) = covariance(real);
    let (m2, s2) = covariance(generated);
    fid_from_moments(&m1, &s1, &m2, &s2)
}
