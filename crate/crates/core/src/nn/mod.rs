//! Minimal neural-network toolkit: a reverse-mode tape, dense layers and Adam.

pub mod graph;
pub mod layers;
pub mod optim;

pub use graph::{Gradients, Graph, Var};
pub use layers::{uniform_init, Activation, Linear, Mlp, Parameterized};
pub use optim::Adam;

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Gradients for the leaves bound by [`Parameterized::bind`], in order.
pub fn collect_grads(g: &Graph, grads: &Gradients, vars: &[Var]) -> Vec<Array2<f64>> {
    vars.iter()
        .map(|v| grads.get_or_zeros(*v, g.shape(*v)))
        .collect()
}

/// Parameters of `p` named `<prefix>.<k>` for checkpoint bundles.
pub fn named_parameters<'a, P: Parameterized + ?Sized>(
    prefix: &str,
    p: &'a P,
) -> Vec<(String, &'a Array2<f64>)> {
    p.parameters()
        .into_iter()
        .enumerate()
        .map(|(k, a)| (format!("{prefix}.{k}"), a))
        .collect()
}

/// Inverse of [`named_parameters`]: overwrites every parameter of `p` from
/// `arrays`, checking shapes.
pub fn restore_parameters<P: Parameterized + ?Sized>(
    prefix: &str,
    p: &mut P,
    arrays: &HashMap<String, Array2<f64>>,
) -> Result<()> {
    for (k, slot) in p.parameters_mut().into_iter().enumerate() {
        let name = format!("{prefix}.{k}");
        let a = arrays
            .get(&name)
            .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks array {name}")))?;
        if a.dim() != slot.dim() {
            return Err(Error::shape(slot.dim(), a.dim()));
        }
        slot.assign(a);
    }
    Ok(())
}

pub fn format_widths(w: &[usize]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_widths(s: &str) -> Option<Vec<usize>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

/// Step size and batching shared by every trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> Adam {
        let opt = Adam::new(self.lr);
        match self.clip_norm {
            Some(c) => opt.with_clip_norm(c),
            None => opt,
        }
    }
}
