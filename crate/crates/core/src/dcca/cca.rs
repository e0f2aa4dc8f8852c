use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{from_dmatrix, require_positive_definite, sym_pow, symmetrize, to_dmatrix, EIGEN_FLOOR};

/// Batch covariances of two streams, before regularisation.
#[derive(Clone, Debug)]
pub struct CovarianceTriple {
    pub sigma_1: DMatrix<f64>,
    pub sigma_2: DMatrix<f64>,
    pub sigma_12: DMatrix<f64>,
    pub r: f64,
}

impl CovarianceTriple {
    /// Centred, `1/(N-1)`-normalised estimates from paired rows.
    pub fn from_samples(h1: &Array2<f64>, h2: &Array2<f64>, r: f64) -> Result<Self> {
        let n = h1.nrows();
        if h2.nrows() != n {
            return Err(Error::shape(n, h2.nrows()));
        }
        let o = h1.ncols().max(h2.ncols());
        if n <= o {
            return Err(Error::BatchTooSmall { batch: n, dim: o });
        }
        let c1 = centre(h1);
        let c2 = centre(h2);
        let k = 1.0 / (n as f64 - 1.0);
        Ok(Self {
            sigma_1: to_dmatrix(&c1.t().dot(&c1)) * k,
            sigma_2: to_dmatrix(&c2.t().dot(&c2)) * k,
            sigma_12: to_dmatrix(&c1.t().dot(&c2)) * k,
            r,
        })
    }
}

pub(crate) fn centre(h: &Array2<f64>) -> Array2<f64> {
    let mean = h.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(h.ncols()));
    h - &mean
}

/// Whitening matrices, SVD of `T` and the total correlation.
#[derive(Clone, Debug)]
pub struct CcaSolution {
    pub total: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `(Sigma_1 + rI)^{-1/2}`
    pub whiten_1: DMatrix<f64>,
    pub whiten_2: DMatrix<f64>,
    /// Left and right singular vectors of `T`, columns in descending order.
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl CcaSolution {
    /// Canonical directions for stream 1 (`o1 x k`): `whiten_1 * U`.
    pub fn rotation_1(&self) -> DMatrix<f64> {
        &self.whiten_1 * &self.u
    }

    pub fn rotation_2(&self) -> DMatrix<f64> {
        &self.whiten_2 * &self.v
    }
}

fn regularised(m: &DMatrix<f64>, r: f64, what: &str) -> Result<DMatrix<f64>> {
    let reg = symmetrize(m) + DMatrix::identity(m.nrows(), m.ncols()) * r;
    require_positive_definite(&reg, what)?;
    Ok(reg)
}

/// `T = (S1 + rI)^{-1/2} S12 (S2 + rI)^{-1/2}` and its SVD.
pub fn solve_cca(cov: &CovarianceTriple) -> Result<CcaSolution> {
    let w1 = sym_pow(&regularised(&cov.sigma_1, cov.r, "sigma_1")?, -0.5, EIGEN_FLOOR);
    let w2 = sym_pow(&regularised(&cov.sigma_2, cov.r, "sigma_2")?, -0.5, EIGEN_FLOOR);
    let t = &w1 * &cov.sigma_12 * &w2;
    let svd = t.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_full = svd.u.expect("requested U");
    let vt_full = svd.v_t.expect("requested V^T");
    let k = order.len();
    let u = DMatrix::from_fn(u_full.nrows(), k, |i, j| u_full[(i, order[j])]);
    let v = DMatrix::from_fn(vt_full.ncols(), k, |i, j| vt_full[(order[j], i)]);
    let singular_values: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    Ok(CcaSolution {
        total: singular_values.iter().sum(),
        singular_values,
        whiten_1: w1,
        whiten_2: w2,
        u,
        v,
    })
}

/// `F = sum of singular values of T`, plus the singular values (descending).
pub fn total_correlation(cov: &CovarianceTriple) -> Result<(f64, Vec<f64>)> {
    let s = solve_cca(cov)?;
    Ok((s.total, s.singular_values))
}

/// `Tr((T^T T)^{1/2})` through a symmetric eigendecomposition; used to cross
/// check the SVD route.
pub fn total_correlation_eigen(cov: &CovarianceTriple) -> Result<f64> {
    let w1 = sym_pow(&regularised(&cov.sigma_1, cov.r, "sigma_1")?, -0.5, EIGEN_FLOOR);
    let w2 = sym_pow(&regularised(&cov.sigma_2, cov.r, "sigma_2")?, -0.5, EIGEN_FLOOR);
    let t = &w1 * &cov.sigma_12 * &w2;
    let tt = t.transpose() * &t;
    let eig = SymmetricEigen::new(symmetrize(&tt));
    Ok(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Total correlation of two batches and its gradient with respect to each
/// batch (`N x o_i`).
pub fn correlation_and_gradient(
    h1: &Array2<f64>,
    h2: &Array2<f64>,
    r: f64,
) -> Result<(f64, Vec<f64>, Array2<f64>, Array2<f64>)> {
    let cov = CovarianceTriple::from_samples(h1, h2, r)?;
    let sol = solve_cca(&cov)?;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sol.singular_values.clone()));
    let a = &sol.whiten_1;
    let b = &sol.whiten_2;
    let g12 = a * &sol.u * sol.v.transpose() * b;
    let g11 = a * &sol.u * &d * sol.u.transpose() * a * -0.5;
    let g22 = b * &sol.v * &d * sol.v.transpose() * b * -0.5;
    let c1 = to_dmatrix(&centre(h1));
    let c2 = to_dmatrix(&centre(h2));
    let k = 1.0 / (h1.nrows() as f64 - 1.0);
    let d1 = (&c1 * &g11 * 2.0 + &c2 * g12.transpose()) * k;
    let d2 = (&c2 * &g22 * 2.0 + &c1 * &g12) * k;
    Ok((sol.total, sol.singular_values, from_dmatrix(&d1), from_dmatrix(&d2)))
}
