use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gaussian::{kl_to_standard_var, reparameterize, standard_normal};
use super::likelihood::log_likelihood_var;
use super::model::{JointModel, JointVars};
use crate::data::{BatchIterator, MultimodalDataset};
use crate::error::{Error, Result};
use crate::nn::{collect_grads, Graph, Parameterized, TrainConfig, Var};

/// Batch-mean ELBO and its parts. `reconstruction[i]` is the unweighted
/// mean `ln p(x_i | z)`; `elbo = sum_i w_i * reconstruction[i] - kl`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub reconstruction: Vec<f64>,
    pub kl: f64,
}

/// Graph nodes of one ELBO evaluation.
pub(crate) struct ElboNodes {
    /// `N x 1` per-modality log-likelihoods.
    pub recon: Vec<Var>,
    /// `N x 1` closed-form KL to the prior.
    pub kl: Var,
    pub z: Var,
    pub log_var: Var,
}

pub(crate) fn elbo_nodes(
    model: &JointModel,
    g: &mut Graph,
    vars: &JointVars,
    batch: &[Array2<f64>],
    eps: Array2<f64>,
) -> ElboNodes {
    let enc = model.encode_graph(g, vars, batch);
    let z = reparameterize(g, enc.mean, enc.log_var, eps);
    let recon = (0..model.n_modalities())
        .map(|i| {
            let p = model.decode_graph(g, vars, i, z);
            log_likelihood_var(g, p, &batch[i], model.decoders[i].family)
        })
        .collect();
    let kl = kl_to_standard_var(g, enc.mean, enc.log_var);
    ElboNodes {
        recon,
        kl,
        z,
        log_var: enc.log_var,
    }
}

/// Scalar `-mean(sum_i w_i ln p(x_i|z) - kl_weight * KL)`.
pub(crate) fn negative_elbo(model: &JointModel, g: &mut Graph, nodes: &ElboNodes, kl_weight: f64) -> Var {
    let mut acc = g.scale(nodes.kl, -kl_weight);
    for (r, &w) in nodes.recon.iter().zip(&model.reconstruction_weights) {
        let t = g.scale(*r, w);
        acc = g.add(acc, t);
    }
    let m = g.mean_all(acc);
    g.neg(m)
}

fn terms(model: &JointModel, g: &Graph, nodes: &ElboNodes) -> ElboTerms {
    let mean = |v: Var| g.value(v).mean().unwrap_or(0.0);
    let reconstruction: Vec<f64> = nodes.recon.iter().map(|&r| mean(r)).collect();
    let kl = mean(nodes.kl);
    let elbo = reconstruction
        .iter()
        .zip(&model.reconstruction_weights)
        .map(|(r, w)| r * w)
        .sum::<f64>()
        - kl;
    ElboTerms {
        elbo,
        reconstruction,
        kl,
    }
}

/// ELBO with caller-supplied standard-normal noise (`N x d_z`).
pub fn elbo_with_noise(model: &JointModel, batch: &[Array2<f64>], eps: Array2<f64>) -> Result<ElboTerms> {
    let n = model.check_batch(batch)?;
    if eps.dim() != (n, model.latent_dim) {
        return Err(Error::shape((n, model.latent_dim), eps.dim()));
    }
    let mut g = Graph::new();
    let vars = model.bind_vars(&mut g, false);
    let nodes = elbo_nodes(model, &mut g, &vars, batch, eps);
    Ok(terms(model, &g, &nodes))
}

/// One reparameterized latent draw per sample.
pub fn elbo<R: Rng + ?Sized>(model: &JointModel, batch: &[Array2<f64>], rng: &mut R) -> Result<ElboTerms> {
    let n = model.check_batch(batch)?;
    let eps = standard_normal(rng, (n, model.latent_dim));
    elbo_with_noise(model, batch, eps)
}

/// Negative ELBO and its gradient for every joint-model parameter, in
/// [`Parameterized`] order.
pub fn elbo_gradient(
    model: &JointModel,
    batch: &[Array2<f64>],
    eps: Array2<f64>,
    kl_weight: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    model.check_batch(batch)?;
    let mut g = Graph::new();
    let vars = model.bind_vars(&mut g, true);
    let nodes = elbo_nodes(model, &mut g, &vars, batch, eps);
    let loss = negative_elbo(model, &mut g, &nodes, kl_weight);
    let grads = g.backward(loss);
    Ok((g.scalar(loss), collect_grads(&g, &grads, &vars.all())))
}

/// Derived stream for latent noise, disjoint from the shuffling stream.
pub(crate) fn noise_rng(seed: u64, salt: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(epoch as u64);
    rng
}

const STEP1_SALT: u64 = 0x5eed_0001;

/// Step 1: maximise the joint ELBO over encoder and decoders. Returns the
/// per-epoch mean loss (negative ELBO).
pub fn train_step1(
    model: &mut JointModel,
    data: &MultimodalDataset,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    model.check_batch(&data.batch(&[]))?;
    let batches = BatchIterator::new(data.len(), cfg.batch_size, Some(cfg.seed));
    let mut opt = cfg.optimizer();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = noise_rng(cfg.seed, STEP1_SALT, epoch);
        let mut total = 0.0;
        for idx in batches.epoch(epoch) {
            let batch = data.batch(&idx);
            let eps = standard_normal(&mut rng, (idx.len(), model.latent_dim));
            let (loss, grads) = elbo_gradient(model, &batch, eps, 1.0)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            opt.step(model.parameters_mut(), &grads);
            total += loss * idx.len() as f64;
        }
        let mean = total / data.len() as f64;
        log::info!("step1 epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok(curve)
}
