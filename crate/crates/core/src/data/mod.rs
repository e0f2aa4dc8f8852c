//! Multimodal datasets: the squares/circles toy generator, label-matched
//! pairing of unimodal datasets, batching and the on-disk format.

mod batch;
mod io;
mod pairing;
mod toy;

pub use batch::BatchIterator;
pub use io::{load_dataset, load_unimodal, save_dataset, save_unimodal};
pub(crate) use io::{read_spec, spec_entries};
pub use pairing::{pair_by_label, UnimodalDataset};
pub use toy::{generate_toy_dataset, ToyConfig, LABEL_EMPTY, LABEL_FULL};

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LikelihoodFamily {
    GaussianUnitVariance,
    Bernoulli,
}

impl LikelihoodFamily {
    pub fn name(self) -> &'static str {
        match self {
            LikelihoodFamily::GaussianUnitVariance => "gaussian_unit_variance",
            LikelihoodFamily::Bernoulli => "bernoulli",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian_unit_variance" | "gaussian" => Some(LikelihoodFamily::GaussianUnitVariance),
            "bernoulli" => Some(LikelihoodFamily::Bernoulli),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalitySpec {
    pub name: String,
    /// `(channels, height, width)` for images or `(attribute_count,)`.
    pub shape: Vec<usize>,
    pub family: LikelihoodFamily,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, family: LikelihoodFamily) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "modality shape {shape:?} must have dimensions >= 1"
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            family,
        })
    }

    /// Flattened feature count.
    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    /// `(height, width)` when the modality is a single-channel image.
    pub fn image_hw(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [1, h, w] => Some((*h, *w)),
            [h, w] => Some((*h, *w)),
            _ => None,
        }
    }

    pub fn shape_string(&self) -> String {
        self.shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }

    pub fn parse_shape(s: &str) -> Option<Vec<usize>> {
        s.split('x').map(|p| p.trim().parse().ok()).collect()
    }
}

/// One observation: a value per modality plus the optional shared label.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub modalities: Vec<Array1<f64>>,
    pub shared_label: Option<i64>,
}

/// Column-oriented multimodal dataset: modality `i` is an `N x dim_i` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub specs: Vec<ModalitySpec>,
    pub modalities: Vec<Array2<f64>>,
    pub labels: Option<Vec<i64>>,
    /// Per-sample generative factors kept for plotting (toy sizes), `N x k`.
    pub factors: Option<Array2<f64>>,
}

impl MultimodalDataset {
    pub fn new(
        specs: Vec<ModalitySpec>,
        modalities: Vec<Array2<f64>>,
        labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        if specs.len() != modalities.len() || specs.is_empty() {
            return Err(Error::shape(specs.len(), modalities.len()));
        }
        let n = modalities[0].nrows();
        for (spec, m) in specs.iter().zip(&modalities) {
            if m.nrows() != n || m.ncols() != spec.dim() {
                return Err(Error::shape((n, spec.dim()), m.dim()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape(n, l.len()));
            }
        }
        Ok(Self {
            specs,
            modalities,
            labels,
            factors: None,
        })
    }

    pub fn len(&self) -> usize {
        self.modalities[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_modalities(&self) -> usize {
        self.specs.len()
    }

    pub fn sample(&self, i: usize) -> MultimodalSample {
        MultimodalSample {
            modalities: self.modalities.iter().map(|m| m.row(i).to_owned()).collect(),
            shared_label: self.labels.as_ref().map(|l| l[i]),
        }
    }

    /// Rows `idx` of every modality.
    pub fn batch(&self, idx: &[usize]) -> Vec<Array2<f64>> {
        self.modalities
            .iter()
            .map(|m| m.select(Axis(0), idx))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            specs: self.specs.clone(),
            modalities: self.batch(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            factors: self.factors.as_ref().map(|f| f.select(Axis(0), idx)),
        }
    }

    /// Splits the first `n_first` samples from the rest.
    pub fn split_at(&self, n_first: usize) -> (Self, Self) {
        let n_first = n_first.min(self.len());
        let a: Vec<usize> = (0..n_first).collect();
        let b: Vec<usize> = (n_first..self.len()).collect();
        (self.subset(&a), self.subset(&b))
    }
}
