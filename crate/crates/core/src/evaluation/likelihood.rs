use ndarray::{Array1, Array2};
use rand::Rng;

use crate::dcca::DccaProjectionSet;
use crate::error::{Error, Result};
use crate::flow::{FlowStack, UnimodalPosteriorSet};
use crate::joint::gaussian::{standard_normal, LN_2PI};
use crate::joint::likelihood::log_likelihood;
use crate::joint::JointModel;
use crate::linalg::{log_mean_exp_with_se, mean_and_se};
use crate::poe_hmc::{subset_latents, HmcConfig, PoeTarget};

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    fn log_mean_exp(xs: &[f64]) -> Self {
        let (value, se) = log_mean_exp_with_se(xs);
        Self { value, se, n: xs.len() }
    }
}

fn broadcast(row: &Array2<f64>, n: usize) -> Array2<f64> {
    crate::flow::stack::broadcast_rows(row, n)
}

fn single_row(x: &Array2<f64>) -> Result<()> {
    if x.nrows() != 1 {
        return Err(Error::shape(1, x.nrows()));
    }
    Ok(())
}

/// Per-row `ln N(z; mean, diag(exp(log_var)))` with one-row parameters.
fn diag_log_density(z: &Array2<f64>, mean: &Array2<f64>, log_var: &Array2<f64>) -> Array1<f64> {
    let d = z.ncols();
    z.rows()
        .into_iter()
        .map(|r| {
            (0..d)
                .map(|j| {
                    let lv = log_var[(0, j)];
                    -0.5 * ((r[j] - mean[(0, j)]).powi(2) * (-lv).exp() + lv + LN_2PI)
                })
                .sum()
        })
        .collect()
}

/// Sum over modalities of `ln p(x_i | z_k)` for each row `z_k`.
fn decoder_log_likelihood(joint: &JointModel, i: usize, x: &Array2<f64>, z: &Array2<f64>) -> Result<Array1<f64>> {
    let params = joint.decode(i, z);
    log_likelihood(&params, &broadcast(x, z.nrows()), joint.decoders[i].family)
}

/// Importance weights `ln p(X | z_k) + ln p(z_k) - ln q(z_k | X)` with
/// `z_k ~ q(z | X)`.
pub fn joint_log_weights<R: Rng + ?Sized>(
    joint: &JointModel,
    sample: &[Array2<f64>],
    n_is: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if n_is == 0 {
        return Err(Error::InvalidConfig("n_is must be at least 1".into()));
    }
    if joint.check_batch(sample)? != 1 {
        return Err(Error::shape(1, sample[0].nrows()));
    }
    let (mean, log_var) = joint.encode(sample)?;
    let eps = standard_normal(rng, (n_is, joint.latent_dim));
    let z = &broadcast(&mean, n_is) + &(&broadcast(&log_var.mapv(|v| (0.5 * v).exp()), n_is) * &eps);
    let mut w = diag_log_density(&z, &Array2::zeros((1, joint.latent_dim)), &Array2::zeros((1, joint.latent_dim)));
    w -= &diag_log_density(&z, &mean, &log_var);
    for (i, x) in sample.iter().enumerate() {
        w += &decoder_log_likelihood(joint, i, x, &z)?;
    }
    Ok(w)
}

/// Importance-sampled `ln p(X)` for one multimodal sample.
pub fn estimate_joint_ll<R: Rng + ?Sized>(
    joint: &JointModel,
    sample: &[Array2<f64>],
    n_is: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let w = joint_log_weights(joint, sample, n_is, rng)?;
    Ok(Estimate::log_mean_exp(w.as_slice().unwrap()))
}

/// `ln (1/n) sum_k p(x_i | z_k)` over given latent draws.
pub fn cond_ll_from_latents(joint: &JointModel, i: usize, x_i: &Array2<f64>, z: &Array2<f64>) -> Result<Estimate> {
    single_row(x_i)?;
    if z.nrows() == 0 {
        return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
    }
    let ll = decoder_log_likelihood(joint, i, x_i, z)?;
    Ok(Estimate::log_mean_exp(ll.as_slice().unwrap()))
}

/// `ln p(x_i | x_j)` with `z ~ q_j(z | c_j)`; `conditioning` is the single
/// row `c_j` the posterior takes.
pub fn estimate_cond_ll<R: Rng + ?Sized>(
    joint: &JointModel,
    posterior: &FlowStack,
    i: usize,
    conditioning: &Array2<f64>,
    x_i: &Array2<f64>,
    n_mc: usize,
    rng: &mut R,
) -> Result<Estimate> {
    single_row(conditioning)?;
    if n_mc == 0 {
        return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
    }
    let z = posterior.sample(conditioning, n_mc, rng);
    cond_ll_from_latents(joint, i, x_i, &z)
}

/// `ln p(x_i | x_S)` with latents drawn from the product-of-experts target.
pub fn estimate_cond_ll_subset(
    joint: &JointModel,
    target: &PoeTarget<'_>,
    cfg: &HmcConfig,
    i: usize,
    x_i: &Array2<f64>,
    n_mc: usize,
) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
    }
    let z = subset_latents(target, cfg, n_mc)?;
    cond_ll_from_latents(joint, i, x_i, &z)
}

/// Both sides of the variation-of-information bound for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViBound {
    /// `ln p(x_2 | x_1) + ln p(x_1 | x_2)`.
    pub lhs: f64,
    /// ELBO plus prior KL minus the encoder-matching term.
    pub rhs: f64,
    /// Combined Monte-Carlo standard error of `lhs - rhs`.
    pub se: f64,
    pub satisfied: bool,
}

pub fn vi_bound_check<R: Rng + ?Sized>(
    joint: &JointModel,
    posteriors: &UnimodalPosteriorSet,
    dcca: Option<&DccaProjectionSet>,
    sample: &[Array2<f64>],
    n_mc: usize,
    rng: &mut R,
) -> Result<ViBound> {
    if joint.n_modalities() != 2 || posteriors.n_modalities() != 2 {
        return Err(Error::InvalidConfig("the information bound is defined for two modalities".into()));
    }
    if joint.check_batch(sample)? != 1 {
        return Err(Error::shape(1, sample[0].nrows()));
    }
    let conds = posteriors.conditioning_all(sample, dcca)?;
    let a = estimate_cond_ll(joint, &posteriors.stacks[0], 1, &conds[0], &sample[1], n_mc, rng)?;
    let b = estimate_cond_ll(joint, &posteriors.stacks[1], 0, &conds[1], &sample[0], n_mc, rng)?;

    let (mean, log_var) = joint.encode(sample)?;
    let eps = standard_normal(rng, (n_mc, joint.latent_dim));
    let z = &broadcast(&mean, n_mc) + &(&broadcast(&log_var.mapv(|v| (0.5 * v).exp()), n_mc) * &eps);
    let lq = diag_log_density(&z, &mean, &log_var);
    let mut terms = Array1::zeros(n_mc);
    for i in 0..2 {
        terms += &decoder_log_likelihood(joint, i, &sample[i], &z)?;
        let lqi = posteriors.stacks[i].log_density(&z, &conds[i]);
        terms += &(&lqi - &lq);
    }
    let (rhs, rse) = mean_and_se(terms.as_slice().unwrap());
    let lhs = a.value + b.value;
    let se = (a.se.powi(2) + b.se.powi(2) + rse.powi(2)).sqrt();
    let slack = 1e-9 * (1.0 + rhs.abs());
    Ok(ViBound {
        lhs,
        rhs,
        se,
        satisfied: lhs + slack >= rhs - 3.0 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LikelihoodFamily, ModalitySpec};
    use crate::flow::{ConditioningMode, FlowArch};
    use crate::joint::JointArch;
    use crate::nn::Linear;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_spec(d: usize) -> ModalitySpec {
        ModalitySpec::new("x", vec![d], LikelihoodFamily::GaussianUnitVariance).unwrap()
    }

    fn linear_joint(ws: &[Array2<f64>], dz: usize) -> JointModel {
        let arch = JointArch {
            encoder_hidden: vec![],
            decoder_hidden: vec![],
        };
        let specs = ws.iter().map(|w| gaussian_spec(w.nrows())).collect();
        let mut m = JointModel::new(&mut ChaCha8Rng::seed_from_u64(0), specs, dz, &arch, None).unwrap();
        for (dec, w) in m.decoders.iter_mut().zip(ws) {
            dec.net.layers[0] = Linear {
                weight: w.t().to_owned(),
                bias: Array2::zeros((1, w.nrows())),
            };
        }
        m
    }

    #[test]
    fn single_importance_sample_is_its_log_weight() {
        let joint = linear_joint(&[array![[0.5, 0.1], [0.2, -0.3]]], 2);
        let x = vec![array![[0.3, -0.2]]];
        let w = joint_log_weights(&joint, &x, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let e = estimate_joint_ll(&joint, &x, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(e.value, w[0]);
    }

    #[test]
    fn importance_estimate_matches_linear_gaussian_marginal() {
        let w = array![[0.9, -0.4], [0.3, 0.7], [-0.5, 0.2]];
        let mut joint = linear_joint(&[w.clone()], 2);
        // Encoder near the true posterior so the estimator converges quickly.
        let wd = crate::linalg::to_dmatrix(&w);
        let post_cov = (nalgebra::DMatrix::identity(2, 2) + wd.transpose() * &wd).try_inverse().unwrap();
        let gain = &post_cov * wd.transpose();
        let head = &mut joint.joint_encoder.head;
        head.weight.fill(0.0);
        head.bias.fill(0.0);
        for r in 0..3 {
            for j in 0..2 {
                head.weight[(r, j)] = gain[(j, r)];
            }
        }
        for j in 0..2 {
            head.bias[(0, 2 + j)] = post_cov[(j, j)].ln();
        }
        let x = array![[0.4, -1.1, 0.8]];
        let cov = &wd * wd.transpose() + nalgebra::DMatrix::identity(3, 3);
        let xv = nalgebra::DVector::from_row_slice(x.as_slice().unwrap());
        let exact = -0.5 * (xv.dot(&(cov.clone().try_inverse().unwrap() * &xv)) + cov.determinant().ln() + 3.0 * LN_2PI);
        let e = estimate_joint_ll(&joint, &[x], 10_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((e.value - exact).abs() < 0.05, "{} vs {exact}", e.value);
    }

    #[test]
    fn constant_decoder_gives_exact_conditional() {
        let joint = linear_joint(&[Array2::zeros((2, 2)), Array2::zeros((3, 2))], 2);
        let post = UnimodalPosteriorSet::new(
            &mut ChaCha8Rng::seed_from_u64(3),
            &[2, 3],
            2,
            &FlowArch::default(),
            ConditioningMode::RawData,
        );
        let x0 = array![[0.1, 0.2]];
        let x1 = array![[1.0, -1.0, 0.5]];
        let e = estimate_cond_ll(&joint, &post.stacks[0], 1, &x0, &x1, 50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let exact = log_likelihood(&Array2::zeros((1, 3)), &x1, LikelihoodFamily::GaussianUnitVariance).unwrap()[0];
        assert!((e.value - exact).abs() < 1e-12);
        assert!(e.se.abs() < 1e-12);
    }

    #[test]
    fn conditional_estimate_matches_gaussian_integral() {
        let w = array![[0.8, 0.1], [-0.4, 0.6]];
        let joint = linear_joint(&[Array2::zeros((2, 2)), w.clone()], 2);
        let mut post = UnimodalPosteriorSet::new(
            &mut ChaCha8Rng::seed_from_u64(5),
            &[2, 2],
            2,
            &FlowArch {
                encoder_hidden: vec![],
                n_blocks: 0,
                ..FlowArch::default()
            },
            ConditioningMode::RawData,
        );
        let (m, v) = ([0.3, -0.6], [0.5, 1.4]);
        let head = &mut post.stacks[0].base.head;
        head.weight.fill(0.0);
        for j in 0..2 {
            head.bias[(0, j)] = m[j];
            head.bias[(0, 2 + j)] = f64::ln(v[j]);
        }
        let x1 = array![[0.9, -0.2]];
        // x_1 | z ~ N(W z, I) and z ~ N(m, diag v): x_1 ~ N(W m, W V W^T + I).
        let wd = crate::linalg::to_dmatrix(&w);
        let cov = &wd * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&v)) * wd.transpose()
            + nalgebra::DMatrix::identity(2, 2);
        let mu = &wd * nalgebra::DVector::from_row_slice(&m);
        let r = nalgebra::DVector::from_row_slice(x1.as_slice().unwrap()) - mu;
        let exact = -0.5 * (r.dot(&(cov.clone().try_inverse().unwrap() * &r)) + cov.determinant().ln() + 2.0 * LN_2PI);
        let e = estimate_cond_ll(&joint, &post.stacks[0], 1, &array![[0.0, 0.0]], &x1, 10_000, &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        assert!((e.value - exact).abs() < 0.05, "{} vs {exact}", e.value);
    }

    #[test]
    fn prior_model_makes_the_bound_tight() {
        let joint = linear_joint(&[Array2::zeros((2, 2)), Array2::zeros((3, 2))], 2);
        let mut joint = joint;
        joint.joint_encoder.head.weight.fill(0.0);
        joint.joint_encoder.head.bias.fill(0.0);
        let mut post = UnimodalPosteriorSet::new(
            &mut ChaCha8Rng::seed_from_u64(7),
            &[2, 3],
            2,
            &FlowArch {
                n_blocks: 0,
                ..FlowArch::default()
            },
            ConditioningMode::RawData,
        );
        for s in &mut post.stacks {
            s.base.head.weight.fill(0.0);
            s.base.head.bias.fill(0.0);
        }
        let sample = vec![array![[0.3, 0.1]], array![[-0.2, 0.4, 1.0]]];
        let b = vi_bound_check(&joint, &post, None, &sample, 100, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!((b.lhs - b.rhs).abs() < 1e-10, "{b:?}");
        assert!(b.satisfied);
    }

    #[test]
    fn random_model_satisfies_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let specs = vec![gaussian_spec(3), gaussian_spec(2)];
        let arch = JointArch {
            encoder_hidden: vec![8],
            decoder_hidden: vec![8],
        };
        let joint = JointModel::new(&mut rng, specs, 2, &arch, None).unwrap();
        let post = UnimodalPosteriorSet::new(&mut rng, &[3, 2], 2, &FlowArch::default(), ConditioningMode::RawData);
        let mut ok = 0;
        for _ in 0..20 {
            let sample = vec![standard_normal(&mut rng, (1, 3)), standard_normal(&mut rng, (1, 2))];
            let b = vi_bound_check(&joint, &post, None, &sample, 1000, &mut rng).unwrap();
            assert!(b.lhs.is_finite() && b.rhs.is_finite());
            ok += b.satisfied as usize;
        }
        assert!(ok >= 19, "{ok} of 20");
    }

    #[test]
    fn log_space_is_finite_at_image_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let specs = vec![
            ModalitySpec::new("svhn", vec![3, 32, 32], LikelihoodFamily::GaussianUnitVariance).unwrap(),
            ModalitySpec::new("mnist", vec![1, 28, 28], LikelihoodFamily::Bernoulli).unwrap(),
        ];
        let arch = JointArch {
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
        };
        let joint = JointModel::new(&mut rng, specs, 4, &arch, None).unwrap();
        let sample = vec![standard_normal(&mut rng, (1, 3072)) * 3.0, Array2::ones((1, 784))];
        let e = estimate_joint_ll(&joint, &sample, 200, &mut rng).unwrap();
        assert!(e.value.is_finite() && e.se.is_finite());
    }
}
