//! Deterministic batching over sample sources.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::manifest::{DatasetManifest, SamplePair};
use super::preprocess::{resize_bilinear, resize_nearest, InputFormat};
use crate::error::{Error, Result};

/// Anything that can serve [`SamplePair`]s by index.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<SamplePair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for DatasetManifest {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn sample(&self, index: usize) -> Result<SamplePair> {
        self.load(index)
    }
}

impl SampleSource for [SamplePair] {
    fn len(&self) -> usize {
        <[SamplePair]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<SamplePair> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::config(format!("sample index {index} out of range")))
    }
}

impl SampleSource for Vec<SamplePair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<SamplePair> {
        self.as_slice().sample(index)
    }
}

/// A record transformed into generator input and training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    /// Preprocessed aerial image, `3 × H × 4H`.
    pub input: ImageTensor,
    pub panorama: Option<ImageTensor>,
    pub segmentation: Option<ImageTensor>,
}

/// Applies the input format and brings targets to `height × 4·height`.
///
/// Panoramas are resized bilinearly; segmentation maps use nearest-neighbour
/// so that class colors are preserved.
pub fn prepare(pair: &SamplePair, format: InputFormat, height: usize) -> Result<PreparedSample> {
    let width = 4 * height;
    Ok(PreparedSample {
        id: pair.id.clone(),
        input: format.apply(&pair.aerial, height)?,
        panorama: pair
            .panorama
            .as_ref()
            .map(|p| resize_bilinear(p, height, width))
            .transpose()?,
        segmentation: pair
            .segmentation
            .as_ref()
            .map(|s| resize_nearest(s, height, width))
            .transpose()?,
    })
}

/// How raw records become network tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub input_format: InputFormat,
    /// Panorama height; width is always four times this.
    pub height: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input_format: InputFormat::default(),
            height: 256,
        }
    }
}

impl DataConfig {
    pub fn width(&self) -> usize {
        4 * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 {
            return Err(Error::config("panorama height must be positive"));
        }
        Ok(())
    }
}

/// A stacked training batch, `N × 3 × H × 4H` per tensor.
#[derive(Debug, Clone)]
pub struct TensorBatch {
    pub ids: Vec<String>,
    pub input: Tensor,
    pub panorama: Tensor,
    pub segmentation: Tensor,
}

impl TensorBatch {
    /// Stacks prepared samples; every sample needs both targets.
    pub fn from_prepared(samples: &[PreparedSample], dtype: DType, device: &Device) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let mut inputs = Vec::with_capacity(samples.len());
        let mut panos = Vec::with_capacity(samples.len());
        let mut segs = Vec::with_capacity(samples.len());
        for s in samples {
            let missing = |what: &str| Error::Integrity(format!("sample {:?} has no {what} target", s.id));
            inputs.push(&s.input);
            panos.push(s.panorama.as_ref().ok_or_else(|| missing("panorama"))?);
            segs.push(s.segmentation.as_ref().ok_or_else(|| missing("segmentation"))?);
        }
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            input: ImageTensor::stack(&inputs, dtype, device)?,
            panorama: ImageTensor::stack(&panos, dtype, device)?,
            segmentation: ImageTensor::stack(&segs, dtype, device)?,
        })
    }

    pub fn from_pairs(pairs: &[SamplePair], config: &DataConfig, dtype: DType, device: &Device) -> Result<Self> {
        let prepared = pairs
            .iter()
            .map(|p| prepare(p, config.input_format, config.height))
            .collect::<Result<Vec<_>>>()?;
        Self::from_prepared(&prepared, dtype, device)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Record visiting order for one epoch.
///
/// Each epoch draws from its own ChaCha stream so the order of epoch `e`
/// depends only on `(seed, e)`, which is what makes mid-run resumption exact.
pub fn epoch_order(len: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Splits an epoch order into batches; the final partial batch is kept.
pub fn epoch_batches(
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok(epoch_order(len, seed, epoch, shuffle)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Iterator over the batches of one epoch, loading samples lazily.
pub struct BatchIterator<'a, S: SampleSource + ?Sized> {
    source: &'a S,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a, S: SampleSource + ?Sized> Iterator for BatchIterator<'a, S> {
    type Item = Result<Vec<SamplePair>>;

    fn next(&mut self) -> Option<Self::Item> {
        let batch = self.batches.next()?;
        Some(batch.into_iter().map(|i| self.source.sample(i)).collect())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.batches.size_hint()
    }
}

/// Batches for a single epoch of `source`.
pub fn batch_iterator<S: SampleSource + ?Sized>(
    source: &S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<BatchIterator<'_, S>> {
    let batches = epoch_batches(source.len(), batch_size, seed, epoch, shuffle)?;
    Ok(BatchIterator {
        source,
        batches: batches.into_iter(),
    })
}
