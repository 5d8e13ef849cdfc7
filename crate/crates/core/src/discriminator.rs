//! Conditional feature-pyramid discriminator.
//!
//! The input is the aerial condition concatenated with a candidate panorama
//! (or segmentation map). A bottom-up path of strided convolutions produces
//! `r` maps of decreasing size; a top-down path then adds to each map the
//! coarser combined map, upsampled (nearest) and projected by a 1×1
//! convolution. Every combined level feeds a 1×1 real/fake head, the
//! cross-branch alignment maps, and the generator's feedback path.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Normalization;
use crate::nn::{instance_norm, leaky_relu, resize_nearest, Conv2d, Module, ParamStore, Scope};

/// Aerial condition plus one 3-channel candidate.
pub const INPUT_CHANNELS: usize = 6;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub num_scales: usize,
    pub base_channels: usize,
    pub max_channel_multiplier: usize,
    pub normalization: Normalization,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_scales: 5,
            base_channels: 64,
            max_channel_multiplier: 8,
            normalization: Normalization::Instance,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales < 1 {
            return Err(Error::config("discriminator needs at least one scale"));
        }
        if self.base_channels == 0 || self.max_channel_multiplier == 0 {
            return Err(Error::config("channel widths must be positive"));
        }
        Ok(())
    }

    pub fn level_channels(&self, l: usize) -> usize {
        let mult = 1usize
            .checked_shl(l as u32)
            .unwrap_or(usize::MAX)
            .min(self.max_channel_multiplier);
        self.base_channels * mult
    }

    pub fn all_level_channels(&self) -> Vec<usize> {
        (0..self.num_scales).map(|l| self.level_channels(l)).collect()
    }
}

/// Combined per-scale features, finest level first.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub levels: Vec<Tensor>,
}

impl PyramidFeatures {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn detach(&self) -> Self {
        Self {
            levels: self.levels.iter().map(Tensor::detach).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PyramidDiscriminator {
    config: DiscriminatorConfig,
    down: Vec<Conv2d>,
    lateral: Vec<Conv2d>,
    heads: Vec<Conv2d>,
    params: ParamStore,
}

impl PyramidDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        config: DiscriminatorConfig,
        dtype: DType,
        device: &Device,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let r = config.num_scales;
        let mut params = ParamStore::new(dtype, device);
        let mut scope = Scope::new(&mut params, rng);
        let mut down = Vec::with_capacity(r);
        for l in 0..r {
            let in_ch = if l == 0 { INPUT_CHANNELS } else { config.level_channels(l - 1) };
            down.push(Conv2d::new(
                &mut scope.push(&format!("down{l}")),
                in_ch,
                config.level_channels(l),
                4,
                2,
                1,
                false,
            )?);
        }
        let mut lateral = Vec::with_capacity(r.saturating_sub(1));
        for l in 0..r - 1 {
            lateral.push(Conv2d::new(
                &mut scope.push(&format!("up{l}")),
                config.level_channels(l + 1),
                config.level_channels(l),
                1,
                1,
                0,
                true,
            )?);
        }
        let mut heads = Vec::with_capacity(r);
        for l in 0..r {
            heads.push(Conv2d::new(
                &mut scope.push(&format!("head{l}")),
                config.level_channels(l),
                1,
                1,
                1,
                0,
                true,
            )?);
        }
        Ok(Self {
            config,
            down,
            lateral,
            heads,
            params,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Multi-scale features of `candidate` conditioned on `aerial`.
    pub fn extract_pyramid(&self, aerial: &Tensor, candidate: &Tensor) -> Result<PyramidFeatures> {
        if aerial.dims() != candidate.dims() {
            return Err(Error::shape(format!(
                "aerial {:?} and candidate {:?} differ",
                aerial.dims(),
                candidate.dims()
            )));
        }
        let (_, c, h, w) = aerial.dims4()?;
        if c * 2 != INPUT_CHANNELS {
            return Err(Error::shape(format!("expected 3-channel inputs, got {c}")));
        }
        let r = self.config.num_scales;
        if (h >> r) == 0 || (w >> r) == 0 {
            return Err(Error::shape(format!("{h}x{w} input is too small for {r} scales")));
        }
        let mut x = Tensor::cat(&[aerial, candidate], 1)?;
        let mut bottom_up = Vec::with_capacity(r);
        for conv in &self.down {
            x = leaky_relu(&instance_norm(&conv.forward(&x)?)?, LEAKY_SLOPE)?;
            bottom_up.push(x.clone());
        }
        let mut levels = vec![bottom_up[r - 1].clone()];
        for l in (0..r - 1).rev() {
            let (_, _, lh, lw) = bottom_up[l].dims4()?;
            let coarser = levels.last().expect("pyramid has a coarsest level");
            let projected = self.lateral[l].forward(&resize_nearest(coarser, lh, lw)?)?;
            levels.push((&bottom_up[l] + projected)?);
        }
        levels.reverse();
        Ok(PyramidFeatures { levels })
    }

    /// One real/fake logit map per level.
    pub fn realfake_scores(&self, feats: &PyramidFeatures) -> Result<Vec<Tensor>> {
        if feats.len() != self.heads.len() {
            return Err(Error::shape(format!(
                "expected {} pyramid levels, got {}",
                self.heads.len(),
                feats.len()
            )));
        }
        feats
            .levels
            .iter()
            .zip(&self.heads)
            .map(|(f, head)| head.forward(f))
            .collect()
    }
}

/// Per-level alignment maps: channel mean of the elementwise product.
pub fn alignment_scores(a: &PyramidFeatures, b: &PyramidFeatures) -> Result<Vec<Tensor>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "pyramids have {} and {} levels",
            a.len(),
            b.len()
        )));
    }
    a.levels
        .iter()
        .zip(&b.levels)
        .enumerate()
        .map(|(i, (x, y))| {
            if x.dims() != y.dims() {
                return Err(Error::shape(format!(
                    "level {i}: {:?} vs {:?}",
                    x.dims(),
                    y.dims()
                )));
            }
            Ok((x * y)?.mean_keepdim(D::Minus(3))?)
        })
        .collect()
}
