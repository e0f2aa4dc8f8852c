use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LikelihoodFamily, ModalitySpec, MultimodalDataset};
use crate::error::{Error, Result};

pub const LABEL_EMPTY: i64 = 0;
pub const LABEL_FULL: i64 = 1;

/// Squares (modality 1) and circles (modality 2) sharing a full/empty flag
/// while their sizes are drawn independently.
///
/// With `shared_bits = 2` a second shared attribute is added: both shapes are
/// drawn at half intensity. The label is then `fill + 2 * dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub image_side: usize,
    /// Inclusive bounds on square half-side and circle radius, in pixels.
    pub size_min: usize,
    pub size_max: usize,
    pub outline_thickness: usize,
    pub fill_probability: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub shared_bits: u8,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            size_min: 3,
            size_max: 13,
            outline_thickness: 1,
            fill_probability: 0.5,
            n_samples: 10_000,
            seed: 0,
            shared_bits: 1,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.size_min == 0 || self.size_min > self.size_max {
            return bad(format!(
                "need 0 < size_min <= size_max, got {}..{}",
                self.size_min, self.size_max
            ));
        }
        if 2 * self.size_max >= self.image_side {
            return bad(format!(
                "size_max {} must be below image_side/2 = {}",
                self.size_max,
                self.image_side as f64 / 2.0
            ));
        }
        if !(0.0..=1.0).contains(&self.fill_probability) {
            return bad(format!("fill_probability {} not in [0,1]", self.fill_probability));
        }
        if self.outline_thickness == 0 {
            return bad("outline_thickness must be >= 1".into());
        }
        if !(1..=2).contains(&self.shared_bits) {
            return bad(format!("shared_bits must be 1 or 2, got {}", self.shared_bits));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        1 << self.shared_bits
    }
}

fn draw_square(img: &mut [f64], side: usize, half: usize, thickness: usize, full: bool, ink: f64) {
    let c = side as f64 / 2.0;
    let h = half as f64;
    let t = thickness as f64;
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f64 + 0.5 - c).abs();
            let dy = (y as f64 + 0.5 - c).abs();
            if dx < h && dy < h && (full || dx > h - t || dy > h - t) {
                img[y * side + x] = ink;
            }
        }
    }
}

fn draw_circle(img: &mut [f64], side: usize, radius: usize, thickness: usize, full: bool, ink: f64) {
    let c = side as f64 / 2.0;
    let r = radius as f64;
    let t = thickness as f64;
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= r && (full || d > r - t) {
                img[y * side + x] = ink;
            }
        }
    }
}

/// Deterministic given `cfg.seed`. Factors hold `(square half-side, circle radius)`.
pub fn generate_toy_dataset(cfg: &ToyConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let side = cfg.image_side;
    let d = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut squares = Array2::zeros((cfg.n_samples, d));
    let mut circles = Array2::zeros((cfg.n_samples, d));
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut factors = Array2::zeros((cfg.n_samples, 2));

    for i in 0..cfg.n_samples {
        let full = rng.random_bool(cfg.fill_probability);
        let dim = cfg.shared_bits == 2 && rng.random_bool(0.5);
        let half = rng.random_range(cfg.size_min..=cfg.size_max);
        let radius = rng.random_range(cfg.size_min..=cfg.size_max);
        let ink = if dim { 0.5 } else { 1.0 };

        draw_square(
            squares.row_mut(i).as_slice_mut().unwrap(),
            side,
            half,
            cfg.outline_thickness,
            full,
            ink,
        );
        draw_circle(
            circles.row_mut(i).as_slice_mut().unwrap(),
            side,
            radius,
            cfg.outline_thickness,
            full,
            ink,
        );
        labels.push(full as i64 + 2 * dim as i64);
        factors[[i, 0]] = half as f64;
        factors[[i, 1]] = radius as f64;
    }

    let shape = vec![1, side, side];
    let specs = vec![
        ModalitySpec::new("squares", shape.clone(), LikelihoodFamily::Bernoulli)?,
        ModalitySpec::new("circles", shape, LikelihoodFamily::Bernoulli)?,
    ];
    let mut ds = MultimodalDataset::new(specs, vec![squares, circles], Some(labels))?;
    ds.factors = Some(factors);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> ToyConfig {
        ToyConfig {
            n_samples: n,
            seed,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn validates_size_bounds() {
        let mut cfg = ToyConfig::default();
        cfg.size_max = 16;
        assert!(generate_toy_dataset(&cfg).is_err());
        cfg.size_max = 2;
        assert!(generate_toy_dataset(&cfg).is_err());
        cfg.size_min = 0;
        cfg.size_max = 5;
        assert!(generate_toy_dataset(&cfg).is_err());
    }

    #[test]
    fn fill_probability_one_gives_all_full() {
        let cfg = ToyConfig {
            fill_probability: 1.0,
            ..small(200, 3)
        };
        let ds = generate_toy_dataset(&cfg).unwrap();
        assert!(ds.labels.unwrap().iter().all(|&l| l == LABEL_FULL));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_toy_dataset(&small(50, 11)).unwrap();
        let b = generate_toy_dataset(&small(50, 11)).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_dataset(&small(50, 12)).unwrap();
        assert_ne!(a.modalities[0], c.modalities[0]);
    }

    #[test]
    fn pixels_are_binary_and_fill_is_shared() {
        let ds = generate_toy_dataset(&small(300, 5)).unwrap();
        assert!(ds.modalities.iter().all(|m| m.iter().all(|&v| v == 0.0 || v == 1.0)));
        let factors = ds.factors.as_ref().unwrap();
        for i in 0..ds.len() {
            let full = ds.labels.as_ref().unwrap()[i] == LABEL_FULL;
            let half = factors[[i, 0]];
            let r = factors[[i, 1]];
            let sq_ink = ds.modalities[0].row(i).sum();
            let ci_ink = ds.modalities[1].row(i).sum();
            // A full square of half-side h covers exactly (2h)^2 pixels.
            assert_eq!(sq_ink == 4.0 * half * half, full, "sample {i}");
            // A full disc covers roughly pi r^2, an outline roughly 2 pi r.
            let disc = std::f64::consts::PI * r * r;
            assert_eq!((ci_ink - disc).abs() < 0.2 * disc, full, "sample {i}");
        }
    }

    #[test]
    fn two_bit_variant_labels_cover_four_classes() {
        let cfg = ToyConfig {
            shared_bits: 2,
            ..small(400, 9)
        };
        let ds = generate_toy_dataset(&cfg).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        for class in 0..4 {
            assert!(labels.iter().any(|&l| l == class));
        }
        for (i, &l) in labels.iter().enumerate() {
            let max = ds.modalities[0].row(i).fold(0.0f64, |a, &b| a.max(b));
            assert_eq!(max == 0.5, l >= 2);
        }
    }
}
