use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Index batches over `0..n`. With a shuffle seed every epoch gets its own
/// permutation, reproducible from `(seed, epoch)` alone.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    shuffle_seed: Option<u64>,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Self {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        Self {
            n,
            batch_size,
            shuffle_seed,
        }
    }

    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        if let Some(seed) = self.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            idx.shuffle(&mut rng);
        }
        idx
    }

    /// Batches for one epoch; the final batch may be partial.
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Vec<usize>> {
        let order = self.order(epoch);
        let bs = self.batch_size;
        (0..self.n.div_ceil(bs)).map(move |b| order[b * bs..((b + 1) * bs).min(order.len())].to_vec())
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }
}
