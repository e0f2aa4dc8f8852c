use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::ClassifierModel;
use crate::data::MultimodalDataset;
use crate::dcca::DccaProjectionSet;
use crate::error::{Error, Result};
use crate::flow::UnimodalPosteriorSet;
use crate::joint::likelihood::sample_observations;
use crate::joint::JointModel;
use crate::poe_hmc::{subset_latents, HmcConfig, PoeTarget};

/// Produces modality `target` from observed `sources`.
pub trait CrossModalGenerator {
    /// `observed[k]` holds `N` rows of modality `sources[k]`. Returns
    /// `N * n_per` rows, sample-major: rows `s * n_per ..` belong to sample `s`.
    fn generate(
        &self,
        sources: &[usize],
        observed: &[Array2<f64>],
        target: usize,
        n_per: usize,
        seed: u64,
    ) -> Result<Array2<f64>>;
}

/// Cross-modal generation through the trained unimodal posteriors (a
/// product of experts sampled by HMC for several sources) and the decoders.
pub struct PipelineGenerator<'a> {
    pub joint: &'a JointModel,
    pub posteriors: &'a UnimodalPosteriorSet,
    pub dcca: Option<&'a DccaProjectionSet>,
    pub hmc: HmcConfig,
    /// Draw from the likelihood instead of returning decoder means.
    pub sample_likelihood: bool,
}

impl PipelineGenerator<'_> {
    fn latents(&self, sources: &[usize], observed: &[Array2<f64>], n_per: usize, seed: u64) -> Result<Array2<f64>> {
        let n = observed[0].nrows();
        if let [i] = sources {
            let c = self.posteriors.conditioning(*i, &observed[0], self.dcca)?;
            let idx: Vec<usize> = (0..n).flat_map(|s| std::iter::repeat_n(s, n_per)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            return Ok(self.posteriors.stacks[*i].sample_rows(&c.select(Axis(0), &idx), &mut rng));
        }
        let mut z = Array2::zeros((n * n_per, self.joint.latent_dim));
        for s in 0..n {
            let rows: Vec<Array2<f64>> = observed.iter().map(|o| o.select(Axis(0), &[s])).collect();
            let target = PoeTarget::from_posteriors(self.posteriors, sources, &rows, self.dcca)?;
            let cfg = HmcConfig {
                seed: seed.wrapping_add(s as u64),
                ..self.hmc.clone()
            };
            let draws = subset_latents(&target, &cfg, n_per)?;
            z.slice_mut(ndarray::s![s * n_per..(s + 1) * n_per, ..]).assign(&draws);
        }
        Ok(z)
    }
}

impl CrossModalGenerator for PipelineGenerator<'_> {
    fn generate(
        &self,
        sources: &[usize],
        observed: &[Array2<f64>],
        target: usize,
        n_per: usize,
        seed: u64,
    ) -> Result<Array2<f64>> {
        if sources.is_empty() || sources.len() != observed.len() {
            return Err(Error::DimensionMismatch(sources.len(), observed.len()));
        }
        if sources.contains(&target) {
            return Err(Error::InvalidConfig(format!("modality {target} is both source and target")));
        }
        if target >= self.joint.n_modalities() {
            return Err(Error::DimensionMismatch(self.joint.n_modalities(), target));
        }
        let z = self.latents(sources, observed, n_per, seed)?;
        let params = self.joint.decode(target, &z);
        Ok(if self.sample_likelihood {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1ee7);
            sample_observations(&params, self.joint.decoders[target].family, &mut rng)
        } else {
            params
        })
    }
}

/// Human-readable direction key such as `0,1->2`.
pub fn direction_key(sources: &[usize], target: usize) -> String {
    let s: Vec<String> = sources.iter().map(|i| i.to_string()).collect();
    format!("{}->{target}", s.join(","))
}

/// Generations of `target` for every sample of `data`, `n_per` each,
/// sample-major. Work is chunked so multi-source sampling stays bounded.
pub fn generate_direction<G: CrossModalGenerator + ?Sized>(
    generator: &G,
    data: &MultimodalDataset,
    sources: &[usize],
    target: usize,
    n_per: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if data.is_empty() || n_per == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    const CHUNK: usize = 256;
    let mut parts = Vec::new();
    for (c, start) in (0..data.len()).step_by(CHUNK).enumerate() {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let observed: Vec<Array2<f64>> = sources.iter().map(|&i| data.modalities[i].select(Axis(0), &idx)).collect();
        parts.push(generator.generate(sources, &observed, target, n_per, seed.wrapping_add(c as u64 * 7919))?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Share of `generated` rows (sample-major, `n_per` per label) whose
/// predicted label matches.
pub fn coherence_of(classifier: &ClassifierModel, generated: &Array2<f64>, labels: &[i64], n_per: usize) -> Result<f64> {
    classifier.ensure_usable()?;
    if n_per == 0 || generated.nrows() != labels.len() * n_per {
        return Err(Error::LabelMismatch);
    }
    let hits = classifier
        .predict(generated)
        .iter()
        .enumerate()
        .filter(|(r, p)| **p == labels[r / n_per])
        .count();
    Ok(hits as f64 / generated.nrows() as f64)
}

/// Fraction of generations of `target` whose predicted label equals the
/// label of the sample they were conditioned on.
pub fn coherence<G: CrossModalGenerator + ?Sized>(
    generator: &G,
    classifier: &ClassifierModel,
    data: &MultimodalDataset,
    sources: &[usize],
    target: usize,
    n_per: usize,
    seed: u64,
) -> Result<f64> {
    classifier.ensure_usable()?;
    let labels = data.labels.as_ref().ok_or(Error::LabelMismatch)?;
    let generated = generate_direction(generator, data, sources, target, n_per, seed)?;
    coherence_of(classifier, &generated, labels, n_per)
}
