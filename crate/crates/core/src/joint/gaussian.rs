use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian `N(mean, diag(exp(log_var)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Array1<f64>,
    pub log_var: Array1<f64>,
}

impl DiagGaussian {
    /// Rejects non-finite entries and clamps `log_var` into `[-20, 20]`.
    pub fn new(mean: Array1<f64>, log_var: Array1<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::DimensionMismatch(mean.len(), log_var.len()));
        }
        if mean.iter().chain(log_var.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite Gaussian parameter".into()));
        }
        Ok(Self {
            mean,
            log_var: log_var.mapv(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            log_var: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim());
        z.iter()
            .zip(self.mean.iter().zip(self.log_var.iter()))
            .map(|(z, (m, lv))| -0.5 * (LN_2PI + lv + (z - m).powi(2) / lv.exp()))
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.log_var.iter().map(|lv| 1.0 + LN_2PI + lv).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                row[j] = self.mean[j] + (0.5 * self.log_var[j]).exp() * eps;
            }
        }
        out
    }
}

/// Closed-form `KL(a || b)` between diagonal Gaussians.
pub fn kl_diag_gaussians(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let kl = a
        .mean
        .iter()
        .zip(a.log_var.iter())
        .zip(b.mean.iter().zip(b.log_var.iter()))
        .map(|((ma, la), (mb, lb))| (la - lb).exp() + (mb - ma).powi(2) / lb.exp() - 1.0 + lb - la)
        .sum::<f64>()
        * 0.5;
    Ok(kl.max(0.0))
}

/// Per-row `ln N(z; mean, diag exp(log_var))`, shape `N x 1`.
pub fn log_density_var(g: &mut Graph, z: Var, mean: Var, log_var: Var) -> Var {
    let diff = g.sub(z, mean);
    let sq = g.square(diff);
    let neg_lv = g.neg(log_var);
    let prec = g.exp(neg_lv);
    let maha = g.mul(sq, prec);
    let inner = g.add(maha, log_var);
    let inner = g.offset(inner, LN_2PI);
    let s = g.sum_rows(inner);
    g.scale(s, -0.5)
}

/// Per-row `ln N(z; 0, I)`, shape `N x 1`.
pub fn standard_log_density_var(g: &mut Graph, z: Var) -> Var {
    let d = g.shape(z).1 as f64;
    let sq = g.square(z);
    let s = g.sum_rows(sq);
    let s = g.scale(s, -0.5);
    g.offset(s, -0.5 * d * LN_2PI)
}

pub fn standard_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|x| x * x + LN_2PI).sum::<f64>()
}

/// Per-row closed-form `KL(N(mean, exp(log_var)) || N(0, I))`, shape `N x 1`.
pub fn kl_to_standard_var(g: &mut Graph, mean: Var, log_var: Var) -> Var {
    let var = g.exp(log_var);
    let m2 = g.square(mean);
    let a = g.add(var, m2);
    let a = g.sub(a, log_var);
    let a = g.offset(a, -1.0);
    let s = g.sum_rows(a);
    g.scale(s, 0.5)
}

/// Per-row analytic entropy, shape `N x 1`.
pub fn entropy_var(g: &mut Graph, log_var: Var) -> Var {
    let a = g.offset(log_var, 1.0 + LN_2PI);
    let s = g.sum_rows(a);
    g.scale(s, 0.5)
}

/// `mean + exp(log_var / 2) * eps`.
pub fn reparameterize(g: &mut Graph, mean: Var, log_var: Var, eps: Array2<f64>) -> Var {
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps);
    let noise = g.mul(std, e);
    g.add(mean, noise)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_2pi_constant() {
        assert!((LN_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let a = DiagGaussian::new(array![0.3, -1.0], array![0.2, -0.5]).unwrap();
        assert!(kl_diag_gaussians(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let a = DiagGaussian::new(array![0.0], array![0.0]).unwrap();
        let b = DiagGaussian::new(array![1.0], array![0.0]).unwrap();
        assert!((kl_diag_gaussians(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let a = DiagGaussian::standard(2);
        let b = DiagGaussian::standard(3);
        assert!(matches!(
            kl_diag_gaussians(&a, &b),
            Err(Error::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let a = DiagGaussian::new(array![0.3, -0.2, 1.0, 0.0], array![0.1, -0.4, 0.3, 0.5]).unwrap();
        let b = DiagGaussian::new(array![-0.1, 0.4, 0.5, 0.2], array![0.3, 0.2, -0.2, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let z = a.sample(&mut rng, n);
        let diffs: Vec<f64> = z
            .rows()
            .into_iter()
            .map(|r| {
                let s = r.as_slice().unwrap();
                a.log_density(s) - b.log_density(s)
            })
            .collect();
        let (mc, se) = crate::linalg::mean_and_se(&diffs);
        let exact = kl_diag_gaussians(&a, &b).unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "mc {mc} exact {exact} se {se}");
    }

    #[test]
    fn log_var_is_clamped_and_nan_rejected() {
        let g = DiagGaussian::new(array![0.0], array![100.0]).unwrap();
        assert_eq!(g.log_var[0], LOG_VAR_MAX);
        assert!(DiagGaussian::new(array![f64::NAN], array![0.0]).is_err());
    }

    #[test]
    fn graph_kernels_match_scalar_versions() {
        let a = DiagGaussian::new(array![0.3, -0.7], array![0.4, -1.1]).unwrap();
        let z = array![[0.1, 0.2], [-1.0, 2.0]];
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let m = g.constant(a.mean.clone().insert_axis(ndarray::Axis(0)));
        let lv = g.constant(a.log_var.clone().insert_axis(ndarray::Axis(0)));
        let ld = log_density_var(&mut g, zv, m, lv);
        let sd = standard_log_density_var(&mut g, zv);
        let kl = kl_to_standard_var(&mut g, m, lv);
        let h = entropy_var(&mut g, lv);
        for i in 0..2 {
            let row = z.row(i).to_vec();
            assert!((g.value(ld)[[i, 0]] - a.log_density(&row)).abs() < 1e-12);
            assert!((g.value(sd)[[i, 0]] - standard_log_density(&row)).abs() < 1e-12);
        }
        let kl_ref = kl_diag_gaussians(&a, &DiagGaussian::standard(2)).unwrap();
        assert!((g.value(kl)[[0, 0]] - kl_ref).abs() < 1e-12);
        assert!((g.value(h)[[0, 0]] - a.entropy()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            ma in prop::collection::vec(-3.0f64..3.0, 3),
            la in prop::collection::vec(-4.0f64..4.0, 3),
            mb in prop::collection::vec(-3.0f64..3.0, 3),
            lb in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let a = DiagGaussian::new(Array1::from(ma), Array1::from(la)).unwrap();
            let b = DiagGaussian::new(Array1::from(mb), Array1::from(lb)).unwrap();
            let kl = kl_diag_gaussians(&a, &b).unwrap();
            prop_assert!(kl >= 0.0);
            if kl < 1e-12 {
                prop_assert!((&a.mean - &b.mean).iter().all(|d| d.abs() < 1e-5));
            }
        }
    }
}
