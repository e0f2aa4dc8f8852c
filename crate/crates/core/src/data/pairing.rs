use std::collections::{BTreeMap, BTreeSet};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModalitySpec, MultimodalDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalDataset {
    pub spec: ModalitySpec,
    /// `N x spec.dim()`
    pub data: ndarray::Array2<f64>,
    pub labels: Vec<i64>,
}

/// Builds a multimodal dataset whose samples share one label across modalities.
///
/// For every label `l`, the first `n_l = min_i count_i(l)` items of each
/// dataset carrying `l` form the base pool. Each round draws an independent
/// permutation of every pool and zips them, so after `matches_per_item`
/// rounds every base item appears in exactly that many samples.
pub fn pair_by_label(
    datasets: &[UnimodalDataset],
    matches_per_item: usize,
    seed: u64,
) -> Result<MultimodalDataset> {
    if datasets.is_empty() {
        return Err(Error::InvalidConfig("no datasets to pair".into()));
    }
    let mut by_label: Vec<BTreeMap<i64, Vec<usize>>> = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if ds.labels.len() != ds.data.nrows() {
            return Err(Error::shape(ds.data.nrows(), ds.labels.len()));
        }
        let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &l) in ds.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        by_label.push(map);
    }

    let sets: Vec<BTreeSet<i64>> = by_label.iter().map(|m| m.keys().copied().collect()).collect();
    let common: BTreeSet<i64> = sets
        .iter()
        .skip(1)
        .fold(sets[0].clone(), |acc, s| acc.intersection(s).copied().collect());
    if common.is_empty() {
        return Err(Error::LabelMismatch);
    }
    for s in &sets {
        if let Some(&missing) = s.difference(&common).next() {
            return Err(Error::EmptyClass(missing));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); datasets.len()];
    let mut labels = Vec::new();
    for &label in &common {
        let n = by_label.iter().map(|m| m[&label].len()).min().unwrap();
        for _ in 0..matches_per_item {
            for (d, map) in by_label.iter().enumerate() {
                let mut pool = map[&label][..n].to_vec();
                pool.shuffle(&mut rng);
                rows[d].extend(pool);
            }
            labels.extend(std::iter::repeat_n(label, n));
        }
    }

    let modalities = datasets
        .iter()
        .zip(&rows)
        .map(|(ds, idx)| ds.data.select(Axis(0), idx))
        .collect();
    let specs = datasets.iter().map(|d| d.spec.clone()).collect();
    MultimodalDataset::new(specs, modalities, Some(labels))
}
