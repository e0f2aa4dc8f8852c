use ndarray::{Array1, Array2};

use crate::dcca::DccaProjectionSet;
use crate::error::{Error, Result};
use crate::flow::{Conditioned, FlowStack, UnimodalPosteriorSet};
use crate::joint::gaussian::LN_2PI;

/// An unnormalised log-density over `d`-dimensional rows.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Per-row log-density and its gradient.
    fn log_density_and_grad(&self, z: &Array2<f64>) -> (Array1<f64>, Array2<f64>);

    fn log_density(&self, z: &Array2<f64>) -> Array1<f64> {
        self.log_density_and_grad(z).0
    }
}

/// `prod_{i in S} q_i(z | c_i) / p(z)^{|S|-1}` for fixed conditioning inputs.
#[derive(Clone, Debug)]
pub struct PoeTarget<'a> {
    pub experts: Vec<(&'a FlowStack, Conditioned)>,
    /// Modality index of each expert.
    pub modalities: Vec<usize>,
    latent_dim: usize,
}

impl<'a> PoeTarget<'a> {
    /// `experts` holds `(modality, posterior, single conditioning row)`.
    pub fn new(experts: Vec<(usize, &'a FlowStack, &Array2<f64>)>) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::InvalidConfig("a product of experts needs at least one expert".into()))?;
        let latent_dim = first.1.latent_dim();
        let mut modalities = Vec::new();
        let mut out = Vec::new();
        for (i, stack, c) in experts {
            if stack.latent_dim() != latent_dim {
                return Err(Error::DimensionMismatch(latent_dim, stack.latent_dim()));
            }
            if c.nrows() != 1 {
                return Err(Error::shape((1, stack.input_dim()), c.dim()));
            }
            if c.ncols() != stack.input_dim() {
                return Err(Error::shape(stack.input_dim(), c.ncols()));
            }
            if modalities.contains(&i) {
                return Err(Error::InvalidConfig(format!("modality {i} appears twice in the subset")));
            }
            modalities.push(i);
            out.push((stack, stack.condition(c)));
        }
        Ok(Self {
            experts: out,
            modalities,
            latent_dim,
        })
    }

    /// Target for the observed `subset` of one sample; `observed[k]` is the
    /// raw single-row input of modality `subset[k]`.
    pub fn from_posteriors(
        posteriors: &'a UnimodalPosteriorSet,
        subset: &[usize],
        observed: &[Array2<f64>],
        dcca: Option<&DccaProjectionSet>,
    ) -> Result<Self> {
        if subset.len() != observed.len() {
            return Err(Error::DimensionMismatch(subset.len(), observed.len()));
        }
        let mut conds = Vec::with_capacity(subset.len());
        for (&i, x) in subset.iter().zip(observed) {
            if i >= posteriors.n_modalities() {
                return Err(Error::DimensionMismatch(posteriors.n_modalities(), i));
            }
            conds.push(posteriors.conditioning(i, x, dcca)?);
        }
        Self::new(
            subset
                .iter()
                .zip(&conds)
                .map(|(&i, c)| (i, &posteriors.stacks[i], c))
                .collect(),
        )
    }

    pub fn subset_size(&self) -> usize {
        self.experts.len()
    }
}

impl LogDensity for PoeTarget<'_> {
    fn dim(&self) -> usize {
        self.latent_dim
    }

    fn log_density_and_grad(&self, z: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let mut lp = Array1::zeros(z.nrows());
        let mut grad = Array2::zeros(z.dim());
        for (stack, cond) in &self.experts {
            let (l, g) = stack.log_density_and_grad(z, cond);
            lp += &l;
            grad += &g;
        }
        let k = (self.experts.len() - 1) as f64;
        if k > 0.0 {
            let d = self.latent_dim as f64;
            for (r, row) in z.rows().into_iter().enumerate() {
                let sq: f64 = row.iter().map(|v| v * v).sum();
                lp[r] -= k * (-0.5 * sq - 0.5 * d * LN_2PI);
            }
            grad.scaled_add(k, z);
        }
        (lp, grad)
    }
}

/// Unnormalised PoE log-density per row of `z`.
pub fn poe_log_density(target: &PoeTarget<'_>, z: &Array2<f64>) -> Array1<f64> {
    target.log_density(z)
}
