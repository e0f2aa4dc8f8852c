//! Dense linear-algebra helpers bridging `ndarray` and `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

pub const EIGEN_FLOOR: f64 = 1e-9;

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Column means and the unbiased (`1/(N-1)`) covariance of the rows of `x`.
pub fn covariance(x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty sample");
    let centered = x - &mean;
    let n = x.nrows() as f64;
    let cov = centered.t().dot(&centered) / (n - 1.0);
    (mean, cov)
}

/// Unbiased cross-covariance `Cov(x, y)` of paired rows.
pub fn cross_covariance(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let cx = x - &x.mean_axis(Axis(0)).expect("non-empty sample");
    let cy = y - &y.mean_axis(Axis(0)).expect("non-empty sample");
    cx.t().dot(&cy) / (x.nrows() as f64 - 1.0)
}

/// `M^p` for a symmetric matrix through its eigendecomposition, with
/// eigenvalues floored at `floor` before exponentiation.
pub fn sym_pow(m: &DMatrix<f64>, p: f64, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|l| l.max(floor).powf(p));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Fails when `m` has no Cholesky factor.
pub fn require_positive_definite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if nalgebra::Cholesky::new(symmetrize(m)).is_none() {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Ok(())
}

/// Log-sum-exp of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(mean(exp(xs)))` together with its delta-method standard error.
pub fn log_mean_exp_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let lme = log_sum_exp(xs) - n.ln();
    if xs.len() < 2 {
        return (lme, 0.0);
    }
    // Relative weights w_k / mean(w); their sample std over sqrt(n) is the SE
    // of the log estimate to first order.
    let rel: Vec<f64> = xs.iter().map(|x| (x - lme).exp()).collect();
    let var = rel.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
    (lme, (var / n).sqrt())
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_pairwise_distance(a: &Array2<f64>, b: &Array2<f64>, same: bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, x) in a.rows().into_iter().enumerate() {
        for (j, y) in b.rows().into_iter().enumerate() {
            if same && i == j {
                continue;
            }
            total += x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Two-sample energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` (rows are draws).
pub fn energy_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    2.0 * mean_pairwise_distance(a, b, false) - mean_pairwise_distance(a, a, true) - mean_pairwise_distance(b, b, true)
}

/// Permutation p-value of the energy-distance test for equal distributions.
pub fn energy_test_pvalue<R: rand::Rng + ?Sized>(
    a: &Array2<f64>,
    b: &Array2<f64>,
    permutations: usize,
    rng: &mut R,
) -> f64 {
    use rand::seq::SliceRandom;
    let observed = energy_distance(a, b);
    let pooled = ndarray::concatenate![ndarray::Axis(0), a.view(), b.view()];
    let mut idx: Vec<usize> = (0..pooled.nrows()).collect();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        idx.shuffle(rng);
        let pa = pooled.select(ndarray::Axis(0), &idx[..a.nrows()]);
        let pb = pooled.select(ndarray::Axis(0), &idx[a.nrows()..]);
        if energy_distance(&pa, &pb) >= observed {
            exceed += 1;
        }
    }
    (exceed + 1) as f64 / (permutations + 1) as f64
}
