use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cca::{correlation_and_gradient, solve_cca, CovarianceTriple};
use crate::data::{BatchIterator, MultimodalDataset};
use crate::error::{Error, Result};
use crate::linalg::from_dmatrix;
use crate::nn::{
    collect_grads, format_widths, named_parameters, parse_widths, restore_parameters, Activation, Graph, Mlp,
    Parameterized, TrainConfig, Var,
};
use crate::store::{self, Manifest};

/// How many canonical coordinates to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EmbeddingDimPolicy {
    /// Keep singular values strictly above `ratio * max`.
    Elbow { ratio: f64 },
    Fixed(usize),
}

impl Default for EmbeddingDimPolicy {
    fn default() -> Self {
        EmbeddingDimPolicy::Elbow { ratio: 0.5 }
    }
}

pub fn select_embedding_dim(spectrum: &[f64], policy: EmbeddingDimPolicy) -> usize {
    match policy {
        EmbeddingDimPolicy::Elbow { ratio } => {
            let max = spectrum.iter().cloned().fold(0.0f64, f64::max);
            let tau = ratio * max;
            spectrum.iter().filter(|&&s| s > tau).count().max(1).min(spectrum.len())
        }
        EmbeddingDimPolicy::Fixed(k) => {
            if k > spectrum.len() {
                log::warn!("requested {k} DCCA dimensions but only {} exist; clamping", spectrum.len());
            }
            k.min(spectrum.len())
        }
    }
}

/// DCCA encoders `g_i`, the canonical rotations fitted after training and the
/// singular-value spectrum.
#[derive(Clone, Debug)]
pub struct DccaProjectionSet {
    pub encoders: Vec<Mlp>,
    pub output_dim: usize,
    pub regularizer: f64,
    /// Per-modality mean of the encoder outputs on the fitting split.
    pub means: Vec<Array1<f64>>,
    /// Per-modality `o x o` rotation to canonical coordinates, columns in
    /// decreasing correlation order.
    pub rotations: Vec<Array2<f64>>,
    /// Singular values of `T` for the (0, 1) pair, descending.
    pub spectrum: Vec<f64>,
    pub d_keep: usize,
}

impl DccaProjectionSet {
    /// `hidden = []` gives linear encoders.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        input_dims: &[usize],
        hidden: &[usize],
        output_dim: usize,
        regularizer: f64,
    ) -> Result<Self> {
        if input_dims.len() < 2 {
            return Err(Error::InvalidConfig("DCCA needs at least two modalities".into()));
        }
        if output_dim == 0 || !(regularizer > 0.0) {
            return Err(Error::InvalidConfig("DCCA output_dim and regularizer must be positive".into()));
        }
        let encoders = input_dims
            .iter()
            .map(|&d| {
                let mut w = vec![d];
                w.extend_from_slice(hidden);
                w.push(output_dim);
                Mlp::new(rng, &w, Activation::Relu, Activation::Identity)
            })
            .collect();
        let m = input_dims.len();
        Ok(Self {
            encoders,
            output_dim,
            regularizer,
            means: vec![Array1::zeros(output_dim); m],
            rotations: vec![Array2::eye(output_dim); m],
            spectrum: Vec::new(),
            d_keep: output_dim,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.encoders.len()
    }

    /// Raw encoder outputs `g_i(x)`.
    pub fn encode(&self, i: usize, x: &Array2<f64>) -> Array2<f64> {
        self.encoders[i].eval(x)
    }

    /// Canonical coordinates of modality `i`, truncated to `d_keep`.
    pub fn embed_modality(&self, i: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
        if i >= self.n_modalities() {
            return Err(Error::DimensionMismatch(self.n_modalities(), i));
        }
        if x.ncols() != self.encoders[i].input_dim() {
            return Err(Error::shape(self.encoders[i].input_dim(), x.ncols()));
        }
        let h = self.encode(i, x) - &self.means[i];
        Ok(h.dot(&self.rotations[i].slice(s![.., ..self.d_keep])))
    }

    /// Embeddings of every modality of a batch.
    pub fn embed(&self, batch: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        batch.iter().enumerate().map(|(i, x)| self.embed_modality(i, x)).collect()
    }

    /// Fits means, rotations and the spectrum on `data`. Modality 0 is
    /// rotated by its canonical directions against modality 1; every other
    /// modality by its directions against modality 0.
    pub fn fit_rotations(&mut self, data: &MultimodalDataset) -> Result<()> {
        let outs: Vec<Array2<f64>> = (0..self.n_modalities())
            .map(|i| self.encode(i, &data.modalities[i]))
            .collect();
        for (i, h) in outs.iter().enumerate() {
            self.means[i] = h.mean_axis(Axis(0)).expect("non-empty split");
        }
        for j in 1..self.n_modalities() {
            let cov = CovarianceTriple::from_samples(&outs[0], &outs[j], self.regularizer)?;
            let sol = solve_cca(&cov)?;
            if j == 1 {
                self.rotations[0] = from_dmatrix(&sol.rotation_1());
                self.spectrum = sol.singular_values.clone();
            }
            self.rotations[j] = from_dmatrix(&sol.rotation_2());
        }
        self.d_keep = self.d_keep.min(self.spectrum.len());
        Ok(())
    }

    /// Singular values for every pair `i < j`.
    pub fn pairwise_spectra(&self, data: &MultimodalDataset) -> Result<Vec<((usize, usize), Vec<f64>)>> {
        let outs: Vec<Array2<f64>> = (0..self.n_modalities())
            .map(|i| self.encode(i, &data.modalities[i]))
            .collect();
        let mut v = Vec::new();
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                let cov = CovarianceTriple::from_samples(&outs[i], &outs[j], self.regularizer)?;
                v.push(((i, j), solve_cca(&cov)?.singular_values));
            }
        }
        Ok(v)
    }

    pub fn parameter_hash(&self) -> String {
        store::hash_arrays(self.parameters())
    }

    pub fn save(&self, dir: &Path, extra: &Manifest) -> Result<()> {
        let mut m = extra.clone();
        m.set("kind", "dcca");
        m.set("n_modalities", self.n_modalities());
        m.set("output_dim", self.output_dim);
        m.set("regularizer", self.regularizer);
        m.set("d_keep", self.d_keep);
        m.set(
            "spectrum",
            self.spectrum.iter().map(|s| format!("{s:e}")).collect::<Vec<_>>().join(","),
        );
        let hidden = self.encoders[0].widths();
        m.set("hidden", format_widths(&hidden[1..hidden.len() - 1]));
        let mut arrays = named_parameters("p", self);
        let means: Vec<Array2<f64>> = self.means.iter().map(|a| a.clone().insert_axis(Axis(0))).collect();
        for (i, enc) in self.encoders.iter().enumerate() {
            m.set(format!("input_dim.{i}"), enc.input_dim());
        }
        for (i, r) in self.rotations.iter().enumerate() {
            arrays.push((format!("rotation.{i}"), r));
        }
        for (i, mu) in means.iter().enumerate() {
            arrays.push((format!("mean.{i}"), mu));
        }
        store::save_bundle(dir, &m, &arrays)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (m, arrays) = store::load_bundle(dir)?;
        if m.get("kind") != Some("dcca") {
            return Err(Error::format(dir, "not a DCCA checkpoint"));
        }
        let n: usize = m.parse_value("n_modalities")?;
        let dims = (0..n)
            .map(|i| m.parse_value(&format!("input_dim.{i}")))
            .collect::<Result<Vec<usize>>>()?;
        let hidden = parse_widths(m.require("hidden")?).ok_or_else(|| Error::format(dir, "bad hidden"))?;
        let mut set = Self::new(
            &mut ChaCha8Rng::seed_from_u64(0),
            &dims,
            &hidden,
            m.parse_value("output_dim")?,
            m.parse_value("regularizer")?,
        )?;
        let map: HashMap<String, Array2<f64>> = arrays.into_iter().collect();
        restore_parameters("p", &mut set, &map)?;
        for i in 0..n {
            let get = |k: String| map.get(&k).cloned().ok_or_else(|| Error::format(dir, format!("missing {k}")));
            set.rotations[i] = get(format!("rotation.{i}"))?;
            set.means[i] = get(format!("mean.{i}"))?.row(0).to_owned();
        }
        let spec = m.require("spectrum")?;
        set.spectrum = spec
            .split(',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| Error::format(dir, "bad spectrum")))
            .collect::<Result<_>>()?;
        set.d_keep = m.parse_value("d_keep")?;
        Ok((set, m))
    }
}

impl Parameterized for DccaProjectionSet {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        self.encoders.iter().flat_map(|e| e.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.encoders.iter_mut().flat_map(|e| e.parameters_mut()).collect()
    }
}

/// `-sum_{i<j} F(g_i(X_i), g_j(X_j))` as a graph node with the closed-form
/// gradient attached to each encoder output.
pub(crate) fn dcca_loss_node(
    g: &mut Graph,
    outputs: &[Var],
    regularizer: f64,
) -> Result<Var> {
    let values: Vec<Array2<f64>> = outputs.iter().map(|&v| g.value(v).clone()).collect();
    let mut total = 0.0;
    let mut grads: Vec<Array2<f64>> = values.iter().map(|v| Array2::zeros(v.dim())).collect();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let (f, _, gi, gj) = correlation_and_gradient(&values[i], &values[j], regularizer)?;
            total += f;
            grads[i] -= &gi;
            grads[j] -= &gj;
        }
    }
    Ok(g.surrogate(-total, outputs.iter().copied().zip(grads).collect()))
}

/// Loss to minimise on one batch.
pub fn dcca_loss(proj: &DccaProjectionSet, batch: &[Array2<f64>]) -> Result<f64> {
    let (loss, _) = dcca_loss_and_grad(proj, batch)?;
    Ok(loss)
}

pub fn dcca_loss_and_grad(proj: &DccaProjectionSet, batch: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    if batch.len() != proj.n_modalities() {
        return Err(Error::DimensionMismatch(proj.n_modalities(), batch.len()));
    }
    let mut g = Graph::new();
    let mut all = Vec::new();
    let mut outs = Vec::new();
    for (enc, x) in proj.encoders.iter().zip(batch) {
        let p = enc.bind(&mut g, true);
        let xv = g.constant(x.clone());
        outs.push(enc.forward(&mut g, &p, xv));
        all.extend(p);
    }
    let loss = dcca_loss_node(&mut g, &outs, proj.regularizer)?;
    let grads = g.backward(loss);
    Ok((g.scalar(loss), collect_grads(&g, &grads, &all)))
}

/// Trains the encoders on `train`, then fits rotations and the spectrum on
/// `validation`. Batches no larger than the output dimension are skipped.
pub fn train_dcca(
    proj: &mut DccaProjectionSet,
    train: &MultimodalDataset,
    validation: &MultimodalDataset,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    if cfg.batch_size <= proj.output_dim {
        return Err(Error::BatchTooSmall {
            batch: cfg.batch_size,
            dim: proj.output_dim,
        });
    }
    let batches = BatchIterator::new(train.len(), cfg.batch_size, Some(cfg.seed.wrapping_add(2)));
    let mut opt = cfg.optimizer();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in batches.epoch(epoch) {
            if idx.len() <= proj.output_dim {
                continue;
            }
            let batch = train.batch(&idx);
            let (loss, grads) = dcca_loss_and_grad(proj, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            opt.step(proj.parameters_mut(), &grads);
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        let mean = total / count.max(1) as f64;
        log::info!("dcca epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    proj.fit_rotations(validation)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LikelihoodFamily, ModalitySpec};
    use crate::joint::gaussian::standard_normal;

    #[test]
    fn elbow_policy() {
        assert_eq!(select_embedding_dim(&[0.9, 0.8, 0.2, 0.1], EmbeddingDimPolicy::default()), 2);
        assert_eq!(select_embedding_dim(&[0.5; 6], EmbeddingDimPolicy::default()), 6);
        assert_eq!(select_embedding_dim(&[0.9, 0.2], EmbeddingDimPolicy::Fixed(5)), 2);
        assert_eq!(select_embedding_dim(&[0.9, 0.2], EmbeddingDimPolicy::Fixed(1)), 1);
    }

    fn two_view(n: usize, seed: u64) -> MultimodalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = standard_normal(&mut rng, (n, 3));
        let e = standard_normal(&mut rng, (n, 3));
        let b = &a * 0.8 + &e * 0.6;
        let spec = |d| ModalitySpec::new("v", vec![d], LikelihoodFamily::GaussianUnitVariance).unwrap();
        MultimodalDataset::new(vec![spec(3), spec(3)], vec![a, b], None).unwrap()
    }

    #[test]
    fn m2_loss_is_single_pair_and_three_views_sum_pairs() {
        let ds = two_view(200, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p2 = DccaProjectionSet::new(&mut rng, &[3, 3], &[], 3, 1e-3).unwrap();
        let batch = ds.batch(&(0..200).collect::<Vec<_>>());
        let h: Vec<_> = (0..2).map(|i| p2.encode(i, &batch[i])).collect();
        let f = super::super::total_correlation(&CovarianceTriple::from_samples(&h[0], &h[1], 1e-3).unwrap())
            .unwrap()
            .0;
        assert!((dcca_loss(&p2, &batch).unwrap() + f).abs() < 1e-12);

        let mut p3 = DccaProjectionSet::new(&mut rng, &[3, 3, 3], &[], 3, 1e-3).unwrap();
        p3.encoders[2] = p3.encoders[0].clone();
        let b3 = vec![batch[0].clone(), batch[1].clone(), batch[0].clone()];
        let hs: Vec<_> = (0..3).map(|i| p3.encode(i, &b3[i])).collect();
        let pair = |i: usize, j: usize| {
            super::super::total_correlation(&CovarianceTriple::from_samples(&hs[i], &hs[j], 1e-3).unwrap())
                .unwrap()
                .0
        };
        let expected = pair(0, 1) + pair(0, 2) + pair(1, 2);
        assert!((dcca_loss(&p3, &b3).unwrap() + expected).abs() < 1e-10);
    }

    #[test]
    fn untrained_spectrum_is_finite_and_embeddings_match_it() {
        let ds = two_view(3000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = DccaProjectionSet::new(&mut rng, &[3, 3], &[8], 3, 1e-3).unwrap();
        let cfg = TrainConfig {
            batch_size: 100,
            ..TrainConfig::default()
        };
        train_dcca(&mut p, &ds, &ds, &cfg, 0).unwrap();
        assert_eq!(p.spectrum.len(), 3);
        assert!(p.spectrum.iter().all(|s| s.is_finite()));
        let e0 = p.embed_modality(0, &ds.modalities[0]).unwrap();
        let e1 = p.embed_modality(1, &ds.modalities[1]).unwrap();
        for k in 0..3 {
            let a = e0.column(k);
            let b = e1.column(k);
            let corr = a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt();
            assert!((corr - p.spectrum[k]).abs() < 0.05, "coord {k}: {corr} vs {}", p.spectrum[k]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = two_view(300, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = DccaProjectionSet::new(&mut rng, &[3, 3], &[4], 2, 1e-3).unwrap();
        p.fit_rotations(&ds).unwrap();
        p.d_keep = 1;
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path(), &Manifest::new()).unwrap();
        let (q, _) = DccaProjectionSet::load(dir.path()).unwrap();
        assert_eq!(q.parameter_hash(), p.parameter_hash());
        assert_eq!(q.spectrum, p.spectrum);
        assert_eq!(
            q.embed_modality(1, &ds.modalities[1]).unwrap(),
            p.embed_modality(1, &ds.modalities[1]).unwrap()
        );
    }

    #[test]
    fn linear_encoders_reach_the_cca_optimum() {
        let rho: [f64; 6] = [0.9, 0.7, 0.3, 0.0, 0.0, 0.0];
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shared = standard_normal(&mut rng, (n, 6));
        let views: Vec<Array2<f64>> = (0..2)
            .map(|_| {
                let noise = standard_normal(&mut rng, (n, 6));
                let x = Array2::from_shape_fn((n, 6), |(r, k)| {
                    let a = rho[k].sqrt();
                    a * shared[(r, k)] + (1.0 - a * a).sqrt() * noise[(r, k)]
                });
                let mix = standard_normal(&mut rng, (6, 6));
                x.dot(&mix)
            })
            .collect();
        let spec = ModalitySpec::new("v", vec![6], LikelihoodFamily::GaussianUnitVariance).unwrap();
        let ds = MultimodalDataset::new(vec![spec.clone(), spec], views, None).unwrap();
        let mut p = DccaProjectionSet::new(&mut rng, &[6, 6], &[], 2, 1e-3).unwrap();
        let cfg = TrainConfig {
            batch_size: 500,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        train_dcca(&mut p, &ds, &ds, &cfg, 60).unwrap();
        let total: f64 = p.spectrum.iter().sum();
        assert!(total > 0.95 * 1.6, "spectrum {:?}", p.spectrum);
        assert!((p.spectrum[0] - 0.9).abs() < 0.05, "spectrum {:?}", p.spectrum);
    }
}
