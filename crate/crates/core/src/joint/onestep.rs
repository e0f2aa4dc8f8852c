use ndarray::Array2;

use super::gaussian::{entropy_var, standard_normal};
use super::model::JointModel;
use super::train::{elbo_nodes, negative_elbo, noise_rng};
use crate::data::{BatchIterator, MultimodalDataset};
use crate::error::{Error, Result};
use crate::flow::posterior::posterior_log_densities;
use crate::flow::{ConditioningMode, UnimodalPosteriorSet};
use crate::nn::{collect_grads, Graph, Parameterized, TrainConfig, Var};

/// Joint ELBO plus `alpha` times the encoder-matching term, optimised in a
/// single stage with a linear KL warmup.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepConfig {
    pub alpha: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub train: TrainConfig,
}

impl OneStepConfig {
    /// Warmup over the first half of training.
    pub fn new(alpha: f64, epochs: usize, train: TrainConfig) -> Self {
        Self {
            alpha,
            warmup_epochs: epochs / 2,
            epochs,
            train,
        }
    }

    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            1.0
        } else {
            (epoch as f64 / self.warmup_epochs as f64).min(1.0)
        }
    }
}

/// Loss and gradients for the joint model followed by the posteriors.
pub fn onestep_loss_and_grad(
    model: &JointModel,
    posteriors: &UnimodalPosteriorSet,
    batch: &[Array2<f64>],
    eps: Array2<f64>,
    kl_weight: f64,
    alpha: f64,
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    model.check_batch(batch)?;
    let mut g = Graph::new();
    let jv = model.bind_vars(&mut g, true);
    let nodes = elbo_nodes(model, &mut g, &jv, batch, eps);
    let mut loss = negative_elbo(model, &mut g, &nodes, kl_weight);
    let pv: Vec<_> = posteriors.stacks.iter().map(|s| s.bind_vars(&mut g, alpha > 0.0)).collect();
    if alpha > 0.0 {
        // sum_i KL(q(z|X) || q_i(z|x_i)) = -m H(q) - sum_i ln q_i(z), one draw.
        let lds = posterior_log_densities(posteriors, &mut g, &pv, nodes.z, batch);
        let h = entropy_var(&mut g, nodes.log_var);
        let mut acc = g.scale(h, -(lds.len() as f64));
        for l in lds {
            acc = g.sub(acc, l);
        }
        let ljm = g.mean_all(acc);
        let weighted = g.scale(ljm, alpha);
        loss = g.add(loss, weighted);
    }
    let grads = g.backward(loss);
    let joint = collect_grads(&g, &grads, &jv.all());
    let post_vars: Vec<Var> = pv.iter().flat_map(|v| v.all()).collect();
    let post = collect_grads(&g, &grads, &post_vars);
    Ok((g.scalar(loss), joint, post))
}

const ONESTEP_SALT: u64 = 0x5eed_0003;

/// Trains the joint model and raw-data unimodal posteriors together. With
/// `alpha = 0` the posteriors are left untouched.
pub fn train_jmvae_onestep(
    model: &mut JointModel,
    posteriors: &mut UnimodalPosteriorSet,
    data: &MultimodalDataset,
    cfg: &OneStepConfig,
) -> Result<Vec<f64>> {
    if !(cfg.alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be non-negative, got {}", cfg.alpha)));
    }
    if posteriors.mode != ConditioningMode::RawData {
        return Err(Error::ConditioningModeMismatch);
    }
    if posteriors.n_modalities() != data.n_modalities() {
        return Err(Error::DimensionMismatch(data.n_modalities(), posteriors.n_modalities()));
    }
    model.check_batch(&data.batch(&[]))?;
    let tc = &cfg.train;
    let batches = BatchIterator::new(data.len(), tc.batch_size, Some(tc.seed));
    let mut joint_opt = tc.optimizer();
    let mut post_opt = tc.optimizer();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let beta = cfg.kl_weight(epoch);
        let mut rng = noise_rng(tc.seed, ONESTEP_SALT, epoch);
        let mut total = 0.0;
        for idx in batches.epoch(epoch) {
            let batch = data.batch(&idx);
            let eps = standard_normal(&mut rng, (idx.len(), model.latent_dim));
            let (loss, jg, pg) = onestep_loss_and_grad(model, posteriors, &batch, eps, beta, cfg.alpha)?;
            let bad = |gs: &[Array2<f64>]| gs.iter().any(|g| g.iter().any(|x| !x.is_finite()));
            if !loss.is_finite() || bad(&jg) || bad(&pg) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            joint_opt.step(model.parameters_mut(), &jg);
            if cfg.alpha > 0.0 {
                post_opt.step(posteriors.parameters_mut(), &pg);
            }
            total += loss * idx.len() as f64;
        }
        let mean = total / data.len() as f64;
        log::info!("onestep epoch {epoch} (kl weight {beta:.2}): loss {mean:.4}");
        curve.push(mean);
    }
    Ok(curve)
}
