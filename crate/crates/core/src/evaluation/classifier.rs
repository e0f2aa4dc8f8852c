use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BatchIterator;
use crate::error::{Error, Result};
use crate::nn::{
    collect_grads, format_widths, named_parameters, parse_widths, restore_parameters, Activation, Graph, Mlp,
    Parameterized, TrainConfig,
};
use crate::store::{self, Manifest};

pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.9;

/// Per-modality label classifier used as the coherence oracle. Its
/// penultimate activations double as the FID feature extractor.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub net: Mlp,
    /// Label value of each output logit, ascending.
    pub classes: Vec<i64>,
    /// Held-out accuracy, recorded by training.
    pub accuracy: Option<f64>,
    pub accuracy_floor: f64,
}

impl ClassifierModel {
    pub fn new<R: rand::Rng + ?Sized>(rng: &mut R, input_dim: usize, hidden: &[usize], classes: Vec<i64>) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes.len());
        Self {
            net: Mlp::new(rng, &widths, Activation::Relu, Activation::Identity),
            classes,
            accuracy: None,
            accuracy_floor: DEFAULT_ACCURACY_FLOOR,
        }
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        self.net.eval(x)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<i64> {
        argmax_rows(&self.logits(x)).iter().map(|&k| self.classes[k]).collect()
    }

    pub fn accuracy_on(&self, x: &Array2<f64>, labels: &[i64]) -> Result<f64> {
        if x.nrows() != labels.len() {
            return Err(Error::LabelMismatch);
        }
        if labels.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let hits = self.predict(x).iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Activations of the last hidden layer (the input when there is none).
    pub fn features(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        let n = self.net.layers.len();
        for layer in &self.net.layers[..n - 1] {
            h = (h.dot(&layer.weight) + &layer.bias).mapv(|v| v.max(0.0));
        }
        h
    }

    /// Name stamped into reports next to FID values.
    pub fn extractor_id(&self) -> String {
        format!(
            "classifier-penultimate[{}]:{}",
            format_widths(&self.net.widths()),
            &store::hash_arrays(self.net.parameters())[..12]
        )
    }

    /// Refuses classifiers without a recorded accuracy at or above the floor.
    pub fn ensure_usable(&self) -> Result<()> {
        match self.accuracy {
            Some(a) if a >= self.accuracy_floor => Ok(()),
            Some(a) => Err(Error::AccuracyBelowFloor {
                accuracy: a,
                floor: self.accuracy_floor,
            }),
            None => Err(Error::AccuracyBelowFloor {
                accuracy: 0.0,
                floor: self.accuracy_floor,
            }),
        }
    }

    fn class_index(&self, label: i64) -> Result<usize> {
        self.classes.binary_search(&label).map_err(|_| Error::EmptyClass(label))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut m = Manifest::new();
        m.set("kind", "classifier");
        m.set("widths", format_widths(&self.net.widths()));
        m.set(
            "classes",
            self.classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        if let Some(a) = self.accuracy {
            m.set("accuracy", a);
        }
        m.set("accuracy_floor", self.accuracy_floor);
        store::save_bundle(dir, &m, &named_parameters("p", self))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, arrays) = store::load_bundle(dir)?;
        if m.get("kind") != Some("classifier") {
            return Err(Error::format(dir, "not a classifier checkpoint"));
        }
        let widths = parse_widths(m.require("widths")?).ok_or_else(|| Error::format(dir, "bad widths"))?;
        let classes = m
            .require("classes")?
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::format(dir, "bad classes")))
            .collect::<Result<Vec<i64>>>()?;
        let mut c = Self::new(
            &mut ChaCha8Rng::seed_from_u64(0),
            widths[0],
            &widths[1..widths.len() - 1],
            classes,
        );
        let map: HashMap<String, Array2<f64>> = arrays.into_iter().collect();
        restore_parameters("p", &mut c, &map)?;
        c.accuracy = m.get("accuracy").map(|_| m.parse_value("accuracy")).transpose()?;
        c.accuracy_floor = m.parse_value("accuracy_floor")?;
        Ok(c)
    }
}

impl Parameterized for ClassifierModel {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.net.parameters_mut()
    }
}

fn one_hot(idx: &[usize], k: usize) -> Array2<f64> {
    let mut y = Array2::zeros((idx.len(), k));
    for (r, &c) in idx.iter().enumerate() {
        y[(r, c)] = 1.0;
    }
    y
}

/// Trains a softmax classifier on `(train_x, train_labels)` and records its
/// accuracy on the held-out pair. Does not fail when the accuracy is below
/// the floor; [`ClassifierModel::ensure_usable`] does.
pub fn train_classifier(
    train_x: &Array2<f64>,
    train_labels: &[i64],
    test_x: &Array2<f64>,
    test_labels: &[i64],
    hidden: &[usize],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<ClassifierModel> {
    if train_x.nrows() != train_labels.len() || test_x.nrows() != test_labels.len() {
        return Err(Error::LabelMismatch);
    }
    let mut classes: Vec<i64> = train_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidConfig("a classifier needs at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ClassifierModel::new(&mut rng, train_x.ncols(), hidden, classes);
    let targets: Vec<usize> = train_labels
        .iter()
        .map(|&l| model.class_index(l))
        .collect::<Result<_>>()?;
    let batches = BatchIterator::new(train_x.nrows(), cfg.batch_size, Some(cfg.seed.wrapping_add(3)));
    let mut opt = cfg.optimizer();
    for epoch in 0..epochs {
        let mut total = 0.0;
        for idx in batches.epoch(epoch) {
            let x = train_x.select(Axis(0), &idx);
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let p = model.net.bind(&mut g, true);
            let xv = g.constant(x);
            let logits = model.net.forward(&mut g, &p, xv);
            let lp = g.log_softmax(logits);
            let y = g.constant(one_hot(&t, model.classes.len()));
            let picked = g.mul(lp, y);
            let s = g.sum_all(picked);
            let loss = g.scale(s, -1.0 / idx.len() as f64);
            let grads = g.backward(loss);
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: lv });
            }
            opt.step(model.net.parameters_mut(), &collect_grads(&g, &grads, &p));
            total += lv * idx.len() as f64;
        }
        log::debug!("classifier epoch {epoch}: loss {:.4}", total / train_x.nrows() as f64);
    }
    let acc = model.accuracy_on(test_x, test_labels)?;
    if acc < model.accuracy_floor {
        log::warn!("classifier accuracy {acc:.3} is below the floor {}", model.accuracy_floor);
    }
    model.accuracy = Some(acc);
    Ok(model)
}

/// Share of the most frequent label: the accuracy of a constant guess.
pub fn majority_rate(labels: &[i64]) -> f64 {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0) as f64 / labels.len().max(1) as f64
}

fn argmax_rows(a: &Array2<f64>) -> Array1<usize> {
    a.map_axis(Axis(1), |r| {
        let mut best = 0;
        for (k, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = k;
            }
        }
        best
    })
}
