use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::stack::{FlowArch, FlowStack};
use crate::dcca::DccaProjectionSet;
use crate::data::{BatchIterator, MultimodalDataset};
use crate::error::{Error, Result};
use crate::joint::gaussian::standard_normal;
use crate::joint::train::noise_rng;
use crate::joint::JointModel;
use crate::nn::{collect_grads, Graph, Parameterized, TrainConfig, Var};
use crate::store::{self, Manifest};

/// What unimodal posteriors condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditioningMode {
    RawData,
    DccaEmbedding,
}

impl ConditioningMode {
    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::RawData => "raw_data",
            ConditioningMode::DccaEmbedding => "dcca_embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw_data" => Some(ConditioningMode::RawData),
            "dcca_embedding" => Some(ConditioningMode::DccaEmbedding),
            _ => None,
        }
    }
}

/// One flow posterior `q_i(z | c_i)` per modality.
#[derive(Clone, Debug)]
pub struct UnimodalPosteriorSet {
    pub stacks: Vec<FlowStack>,
    pub mode: ConditioningMode,
}

impl UnimodalPosteriorSet {
    /// `input_dims[i]` is the raw modality size or the DCCA embedding size.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        input_dims: &[usize],
        latent_dim: usize,
        arch: &FlowArch,
        mode: ConditioningMode,
    ) -> Self {
        let stacks = input_dims
            .iter()
            .map(|&d| FlowStack::new(rng, d, latent_dim, arch))
            .collect();
        Self { stacks, mode }
    }

    pub fn n_modalities(&self) -> usize {
        self.stacks.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.stacks[0].latent_dim()
    }

    /// `c_i` for modality `i`: the data itself or its DCCA embedding.
    pub fn conditioning(
        &self,
        i: usize,
        x: &Array2<f64>,
        dcca: Option<&DccaProjectionSet>,
    ) -> Result<Array2<f64>> {
        let c = match (self.mode, dcca) {
            (ConditioningMode::RawData, _) => x.clone(),
            (ConditioningMode::DccaEmbedding, Some(d)) => d.embed_modality(i, x)?,
            (ConditioningMode::DccaEmbedding, None) => return Err(Error::ConditioningModeMismatch),
        };
        if c.ncols() != self.stacks[i].input_dim() {
            return Err(Error::shape(self.stacks[i].input_dim(), c.ncols()));
        }
        Ok(c)
    }

    pub fn conditioning_all(
        &self,
        batch: &[Array2<f64>],
        dcca: Option<&DccaProjectionSet>,
    ) -> Result<Vec<Array2<f64>>> {
        if batch.len() != self.n_modalities() {
            return Err(Error::DimensionMismatch(self.n_modalities(), batch.len()));
        }
        batch
            .iter()
            .enumerate()
            .map(|(i, x)| self.conditioning(i, x, dcca))
            .collect()
    }

    pub fn parameter_hash(&self) -> String {
        store::hash_arrays(self.parameters())
    }

    pub fn save(&self, dir: &Path, extra: &Manifest) -> Result<()> {
        let mut m = extra.clone();
        m.set("kind", "unimodal_posteriors");
        m.set("mode", self.mode.name());
        m.set("n_modalities", self.n_modalities());
        let mut arrays = Vec::new();
        for (i, s) in self.stacks.iter().enumerate() {
            let prefix = format!("stack{i}");
            s.write_manifest(&mut m, &prefix);
            arrays.extend(s.named_arrays(&prefix));
        }
        store::save_bundle(dir, &m, &arrays)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (m, arrays) = store::load_bundle(dir)?;
        if m.get("kind") != Some("unimodal_posteriors") {
            return Err(Error::format(dir, "not a posterior checkpoint"));
        }
        let mode = ConditioningMode::parse(m.require("mode")?)
            .ok_or_else(|| Error::format(dir, "bad mode"))?;
        let n: usize = m.parse_value("n_modalities")?;
        let map: HashMap<String, Array2<f64>> = arrays.into_iter().collect();
        let stacks = (0..n)
            .map(|i| FlowStack::from_manifest(&m, &format!("stack{i}"), &map, dir))
            .collect::<Result<Vec<_>>>()?;
        Ok((Self { stacks, mode }, m))
    }
}

impl Parameterized for UnimodalPosteriorSet {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        self.stacks.iter().flat_map(|s| s.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.stacks.iter_mut().flat_map(|s| s.parameters_mut()).collect()
    }
}

/// Per-modality `N x 1` nodes of `ln q_i(z | c_i)` for a shared latent `z`.
pub(crate) fn posterior_log_densities(
    posteriors: &UnimodalPosteriorSet,
    g: &mut Graph,
    vars: &[crate::flow::FlowVars],
    z: Var,
    cond: &[Array2<f64>],
) -> Vec<Var> {
    posteriors
        .stacks
        .iter()
        .zip(vars)
        .zip(cond)
        .map(|((s, v), c)| {
            let input = g.constant(c.clone());
            let (m, lv, ctx) = s.condition_graph(g, v, input);
            s.log_density_graph(g, v, z, m, lv, ctx)
        })
        .collect()
}

/// Latents drawn from the frozen joint encoder with the given noise.
fn joint_latents(joint: &JointModel, batch: &[Array2<f64>], eps: &Array2<f64>) -> Result<Array2<f64>> {
    let (mean, log_var) = joint.encode(batch)?;
    Ok(&mean + &(log_var.mapv(|v| (0.5 * v).exp()) * eps))
}

/// `-sum_i mean ln q_i(z | c_i)` with `z ~ q(z | X)` from the frozen joint
/// encoder, plus gradients for every posterior parameter.
pub fn ljm_loss_and_grad(
    posteriors: &UnimodalPosteriorSet,
    joint: &JointModel,
    batch: &[Array2<f64>],
    dcca: Option<&DccaProjectionSet>,
    eps: &Array2<f64>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let cond = posteriors.conditioning_all(batch, dcca)?;
    let z = joint_latents(joint, batch, eps)?;
    let mut g = Graph::new();
    let vars: Vec<_> = posteriors.stacks.iter().map(|s| s.bind_vars(&mut g, true)).collect();
    let zv = g.constant(z);
    let lds = posterior_log_densities(posteriors, &mut g, &vars, zv, &cond);
    let mut acc = lds[0];
    for &l in &lds[1..] {
        acc = g.add(acc, l);
    }
    let m = g.mean_all(acc);
    let loss = g.neg(m);
    let grads = g.backward(loss);
    let all: Vec<Var> = vars.iter().flat_map(|v| v.all()).collect();
    Ok((g.scalar(loss), collect_grads(&g, &grads, &all)))
}

/// The distillation objective on one batch with fresh latent noise.
pub fn ljm_loss<R: Rng + ?Sized>(
    posteriors: &UnimodalPosteriorSet,
    joint: &JointModel,
    batch: &[Array2<f64>],
    dcca: Option<&DccaProjectionSet>,
    rng: &mut R,
) -> Result<f64> {
    let n = joint.check_batch(batch)?;
    let eps = standard_normal(rng, (n, joint.latent_dim));
    let cond = posteriors.conditioning_all(batch, dcca)?;
    let z = joint_latents(joint, batch, &eps)?;
    let total: f64 = posteriors
        .stacks
        .iter()
        .zip(&cond)
        .map(|(s, c)| s.log_density(&z, c).mean().unwrap_or(0.0))
        .sum();
    Ok(-total)
}

const STEP2_SALT: u64 = 0x5eed_0002;

/// Step 2: fit the unimodal posteriors with the joint model frozen. Returns
/// the per-epoch mean loss.
pub fn train_step2(
    posteriors: &mut UnimodalPosteriorSet,
    joint: &JointModel,
    data: &MultimodalDataset,
    dcca: Option<&DccaProjectionSet>,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    joint.check_batch(&data.batch(&[]))?;
    if posteriors.n_modalities() != data.n_modalities() {
        return Err(Error::DimensionMismatch(data.n_modalities(), posteriors.n_modalities()));
    }
    if posteriors.mode == ConditioningMode::DccaEmbedding && dcca.is_none() {
        return Err(Error::ConditioningModeMismatch);
    }
    let batches = BatchIterator::new(data.len(), cfg.batch_size, Some(cfg.seed.wrapping_add(1)));
    let mut opt = cfg.optimizer();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = noise_rng(cfg.seed, STEP2_SALT, epoch);
        let mut total = 0.0;
        for idx in batches.epoch(epoch) {
            let batch = data.batch(&idx);
            let eps = standard_normal(&mut rng, (idx.len(), joint.latent_dim));
            let (loss, grads) = ljm_loss_and_grad(posteriors, joint, &batch, dcca, &eps)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            opt.step(posteriors.parameters_mut(), &grads);
            total += loss * idx.len() as f64;
        }
        let mean = total / data.len() as f64;
        log::info!("step2 epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok(curve)
}
