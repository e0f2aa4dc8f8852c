use std::process::Command;

use jnf::data::{generate_toy_dataset, pair_by_label, BatchIterator, LikelihoodFamily, ModalitySpec, ToyConfig, UnimodalDataset};
use jnf::store;
use ndarray::Array2;
use proptest::prelude::*;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn toy_sizes_are_uncorrelated_and_fill_is_shared() {
    let ds = generate_toy_dataset(&ToyConfig::default()).unwrap();
    let f = ds.factors.as_ref().unwrap();
    let r = pearson(&f.column(0).to_vec(), &f.column(1).to_vec());
    assert!(r.abs() < 0.05, "size correlation {r}");
    // A filled shape covers its centre pixel, an outline does not.
    let side = 32;
    let centre = (side / 2) * side + side / 2;
    for (i, &l) in ds.labels.as_ref().unwrap().iter().enumerate() {
        let full = l == jnf::data::LABEL_FULL;
        assert_eq!(ds.modalities[0][[i, centre]] == 1.0, full);
        assert_eq!(ds.modalities[1][[i, centre]] == 1.0, full);
    }
}

/// Label-only unimodal set with the given per-class counts.
fn with_counts(name: &str, counts: &[usize]) -> UnimodalDataset {
    let labels: Vec<i64> = counts.iter().enumerate().flat_map(|(l, &c)| std::iter::repeat_n(l as i64, c)).collect();
    UnimodalDataset {
        spec: ModalitySpec::new(name, vec![1], LikelihoodFamily::GaussianUnitVariance).unwrap(),
        data: Array2::zeros((labels.len(), 1)),
        labels,
    }
}

// Training-split class counts of the digit and clothing benchmarks.
const MNIST: [usize; 10] = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
const SVHN: [usize; 10] = [4948, 13861, 10585, 8497, 7458, 6882, 5727, 5595, 5045, 4659];
const FASHION: [usize; 10] = [6000; 10];

#[test]
fn benchmark_pairing_sizes() {
    let expected = |sets: &[&[usize; 10]]| 5 * (0..10).map(|l| sets.iter().map(|s| s[l]).min().unwrap()).sum::<usize>();
    let two = pair_by_label(&[with_counts("mnist", &MNIST), with_counts("svhn", &SVHN)], 5, 0).unwrap();
    assert_eq!(two.len(), expected(&[&MNIST, &SVHN]));
    assert_eq!(two.len(), 280_340);
    let three = pair_by_label(
        &[with_counts("mnist", &MNIST), with_counts("svhn", &SVHN), with_counts("fashion", &FASHION)],
        5,
        0,
    )
    .unwrap();
    assert_eq!(three.len(), 275_975);
}

fn permutation_digest() -> String {
    let it = BatchIterator::new(1000, 64, Some(17));
    let orders: Vec<Array2<f64>> = (0..3)
        .map(|e| Array2::from_shape_vec((1, 1000), it.order(e).into_iter().map(|i| i as f64).collect()).unwrap())
        .collect();
    store::hash_arrays(orders.iter())
}

#[test]
fn shuffles_reproduce_across_processes() {
    const CHILD: &str = "JNF_PERMUTATION_CHILD";
    if std::env::var_os(CHILD).is_some() {
        println!("digest={}", permutation_digest());
        return;
    }
    let digests: Vec<String> = (0..2)
        .map(|_| {
            let out = Command::new(std::env::current_exe().unwrap())
                .args(["--exact", "shuffles_reproduce_across_processes", "--nocapture", "--test-threads=1"])
                .env(CHILD, "1")
                .output()
                .unwrap();
            let text = String::from_utf8_lossy(&out.stdout).to_string();
            text.split("digest=").nth(1).and_then(|t| t.split_whitespace().next()).expect("child printed a digest").to_string()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0], permutation_digest());
    let it = BatchIterator::new(1000, 64, Some(17));
    assert_ne!(it.order(0), it.order(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pairing_matches_labels_with_exact_multiplicity(
        a in proptest::collection::vec(0i64..4, 1..40),
        b in proptest::collection::vec(0i64..4, 1..40),
        matches in 1usize..4,
        seed in any::<u64>(),
    ) {
        let tag = |labels: &[i64], name: &str| UnimodalDataset {
            spec: ModalitySpec::new(name, vec![1], LikelihoodFamily::GaussianUnitVariance).unwrap(),
            data: Array2::from_shape_fn((labels.len(), 1), |(i, _)| i as f64),
            labels: labels.to_vec(),
        };
        let la: std::collections::BTreeSet<_> = a.iter().collect();
        let lb: std::collections::BTreeSet<_> = b.iter().collect();
        let out = pair_by_label(&[tag(&a, "a"), tag(&b, "b")], matches, seed);
        if la != lb {
            prop_assert!(out.is_err());
            return Ok(());
        }
        let ds = out.unwrap();
        let labels = ds.labels.as_ref().unwrap();
        let mut uses = [std::collections::BTreeMap::new(), std::collections::BTreeMap::new()];
        for r in 0..ds.len() {
            for (k, src) in [&a, &b].iter().enumerate() {
                let item = ds.modalities[k][[r, 0]] as usize;
                prop_assert_eq!(src[item], labels[r]);
                *uses[k].entry(item).or_insert(0usize) += 1;
            }
        }
        for u in &uses {
            prop_assert!(u.values().all(|&c| c == matches));
        }
        let expected: usize = la.iter().map(|l| a.iter().filter(|x| x == l).count().min(b.iter().filter(|x| x == l).count())).sum();
        prop_assert_eq!(ds.len(), expected * matches);
    }
}
