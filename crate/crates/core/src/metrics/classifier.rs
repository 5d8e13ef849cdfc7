use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::ImageTensor;
use crate::error::{Error, Result};

/// A fixed image classifier used by the semantic metrics.
///
/// Implementations must be deterministic per image and return probability
/// vectors of length `num_classes` that sum to one.
pub trait ClassifierOracle {
    fn num_classes(&self) -> usize;
    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>>;
    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// Predicts the uniform distribution for every image.
#[derive(Debug, Clone, Copy)]
pub struct UniformClassifier {
    pub classes: usize,
}

impl ClassifierOracle for UniformClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn predict(&self, _image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.classes as f64; self.classes])
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(pooled(image, 1))
    }
}

/// Softmax over a seeded random projection of a coarse average-pooled grid.
///
/// Stands in for a pretrained scene classifier; only comparisons made under
/// the same seed are meaningful.
#[derive(Debug, Clone)]
pub struct SyntheticClassifier {
    classes: usize,
    grid: usize,
    channels: usize,
    seed: u64,
    /// `classes × (channels · grid²)`, row-major.
    weights: Vec<f64>,
}

impl SyntheticClassifier {
    pub const GAIN: f64 = 2.0;

    pub fn new(classes: usize, channels: usize, grid: usize, seed: u64) -> Result<Self> {
        if classes < 2 || channels == 0 || grid == 0 {
            return Err(Error::config(format!(
                "synthetic classifier needs at least 2 classes and a non-empty grid, got {classes} classes, {channels} channels, grid {grid}"
            )));
        }
        let dim = channels * grid * grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, Self::GAIN).expect("finite positive std");
        let weights = (0..classes * dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            classes,
            grid,
            channels,
            seed,
            weights,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Per-channel means over a `grid × grid` partition, in `[0, 1]` units centred at 0.5.
fn pooled(image: &ImageTensor, grid: usize) -> Vec<f64> {
    let (c, h, w) = image.dims();
    let mut out = vec![0.0; c * grid * grid];
    let mut counts = vec![0usize; grid * grid];
    for y in 0..h {
        for x in 0..w {
            counts[(y * grid / h) * grid + x * grid / w] += 1;
        }
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let cell = (y * grid / h) * grid + x * grid / w;
                out[ch * grid * grid + cell] += f64::from(image.get(ch, y, x)) / 2.0;
            }
        }
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v /= counts[i % (grid * grid)].max(1) as f64;
    }
    out
}

impl ClassifierOracle for SyntheticClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        if image.channels() != self.channels || image.height() < self.grid || image.width() < self.grid {
            return Err(Error::shape(format!(
                "classifier expects {} channels and at least {}x{} pixels, got {:?}",
                self.channels,
                self.grid,
                self.grid,
                image.dims()
            )));
        }
        Ok(pooled(image, self.grid))
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let f = self.features(image)?;
        let logits: Vec<f64> = self
            .weights
            .chunks(f.len())
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / sum).collect())
    }
}
