//! U-shaped encoder–decoder with adversarial feedback fusion.
//!
//! Encoder layer `i` (0-based) halves the spatial size with a strided
//! convolution, then instance-normalizes and applies ReLU. Decoder layer `j`
//! mirrors encoder layer `j`: it consumes the junction feature at the
//! resolution of `e[j]` and doubles the resolution with a transposed
//! convolution. Junction `j` is the skip concatenation `e[j] ⊕ d[j+1]` (just
//! `e[j]` at the bottleneck). On the first `feedback_layers` junctions an AFM
//! layer may add a learned correction computed from the previous iteration's
//! discriminator features:
//!
//! ```text
//! d_j = α_j · F_j(skip ⊕ ĥ_g ⊕ ĥ_s) + skip,   skip = e[j] ⊕ d[j+1]
//! ```
//!
//! Without feedback every AFM layer is bypassed and the network is a plain
//! U-Net. The outermost decoder layer emits 6 channels through `tanh`: a
//! panorama (channels 0–2) followed by its segmentation map (channels 3–5).

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm, resize_nearest, Conv2d, ConvTranspose2d, Module, ParamStore, Scope};

pub const INPUT_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_layers: usize,
    pub base_channels: usize,
    /// Channel width of layer `i` is `base_channels · min(2^i, max_channel_multiplier)`.
    pub max_channel_multiplier: usize,
    /// Number of decoder junctions (outermost first) that carry an AFM layer.
    pub feedback_layers: usize,
    /// Fixed fusion weight per AFM layer.
    pub alpha: Vec<f64>,
    pub normalization: Normalization,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            base_channels: 64,
            max_channel_multiplier: 8,
            feedback_layers: 5,
            alpha: vec![0.5; 5],
            normalization: Normalization::Instance,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feedback_layers < 1 || self.num_layers < self.feedback_layers {
            return Err(Error::config(format!(
                "need num_layers >= feedback_layers >= 1, got {} and {}",
                self.num_layers, self.feedback_layers
            )));
        }
        if self.base_channels == 0 || self.max_channel_multiplier == 0 {
            return Err(Error::config("channel widths must be positive"));
        }
        if self.alpha.len() != self.feedback_layers {
            return Err(Error::config(format!(
                "alpha has {} entries, expected one per feedback layer ({})",
                self.alpha.len(),
                self.feedback_layers
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !a.is_finite()) {
            return Err(Error::config(format!("alpha values must be finite, got {a}")));
        }
        Ok(())
    }

    /// Output channels of encoder layer `i`.
    pub fn encoder_channels(&self, i: usize) -> usize {
        let mult = 1usize
            .checked_shl(i as u32)
            .unwrap_or(usize::MAX)
            .min(self.max_channel_multiplier);
        self.base_channels * mult
    }

    /// Channels of the skip feature entering decoder layer `j`.
    pub fn junction_channels(&self, j: usize) -> usize {
        let from_decoder = if j + 1 < self.num_layers {
            self.encoder_channels(j)
        } else {
            0
        };
        self.encoder_channels(j) + from_decoder
    }
}

/// Discriminator features of the previous iteration, one entry per AFM layer (outermost first).
#[derive(Debug, Clone)]
pub struct FeedbackState {
    pub image_feats: Vec<Tensor>,
    pub seg_feats: Vec<Tensor>,
    /// Index of the iteration that produced these features.
    pub iteration: usize,
}

/// The 6-channel decoder output and its two 3-channel halves.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub raw: Tensor,
    pub panorama: Tensor,
    pub segmentation: Tensor,
}

impl GeneratorOutput {
    pub fn from_raw(raw: Tensor) -> Result<Self> {
        let c = raw.dim(1)?;
        if c != OUTPUT_CHANNELS {
            return Err(Error::shape(format!("generator output has {c} channels, expected 6")));
        }
        Ok(Self {
            panorama: raw.narrow(1, 0, 3)?,
            segmentation: raw.narrow(1, 3, 3)?,
            raw,
        })
    }

    pub fn detach(&self) -> Self {
        Self {
            raw: self.raw.detach(),
            panorama: self.panorama.detach(),
            segmentation: self.segmentation.detach(),
        }
    }
}

/// The learned transform `F_j` of an AFM layer: two conv3×3–instance-norm–ReLU blocks.
#[derive(Debug, Clone)]
pub struct AfmTransform {
    first: Conv2d,
    second: Conv2d,
}

impl AfmTransform {
    fn new<R: Rng + ?Sized>(scope: &mut Scope<'_, R>, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            first: Conv2d::new(&mut scope.push("conv1"), in_ch, out_ch, 3, 1, 1, false)?,
            second: Conv2d::new(&mut scope.push("conv2"), out_ch, out_ch, 3, 1, 1, false)?,
        })
    }
}

impl Module for AfmTransform {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.first.forward(xs)?)?.relu()?;
        Ok(instance_norm(&self.second.forward(&h)?)?.relu()?)
    }
}

fn spatial(t: &Tensor) -> Result<(usize, usize)> {
    let (_, _, h, w) = t.dims4()?;
    Ok((h, w))
}

/// Fuses encoder, decoder and feedback features into the next decoder input.
///
/// Returns `alpha · transform(skip ⊕ h_g ⊕ h_s) + skip` where
/// `skip = e ⊕ d`. With `alpha == 0` the transform is not evaluated and the
/// skip concatenation is returned unchanged.
pub fn afm_fuse(
    e: &Tensor,
    d: Option<&Tensor>,
    h_g: &Tensor,
    h_s: &Tensor,
    alpha: f64,
    transform: &dyn Module,
) -> Result<Tensor> {
    let dims = spatial(e)?;
    for (name, t) in [("decoder", d), ("image feedback", Some(h_g)), ("segmentation feedback", Some(h_s))] {
        if let Some(t) = t {
            if spatial(t)? != dims || t.dim(0)? != e.dim(0)? {
                return Err(Error::shape(format!(
                    "{name} feature {:?} does not match encoder feature {:?}",
                    t.dims(),
                    e.dims()
                )));
            }
        }
    }
    let skip = match d {
        Some(d) => Tensor::cat(&[e, d], 1)?,
        None => e.clone(),
    };
    if alpha == 0.0 {
        return Ok(skip);
    }
    let correction = transform.forward(&Tensor::cat(&[&skip, h_g, h_s], 1)?)?;
    if correction.dims() != skip.dims() {
        return Err(Error::shape(format!(
            "feedback transform produced {:?}, expected {:?}",
            correction.dims(),
            skip.dims()
        )));
    }
    Ok(((correction * alpha)? + skip)?)
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    feedback_channels: Vec<usize>,
    encoder: Vec<Conv2d>,
    decoder: Vec<ConvTranspose2d>,
    afm: Vec<AfmTransform>,
    params: ParamStore,
}

impl Generator {
    /// Builds a generator whose AFM layer `j` expects `feedback_channels[j]`
    /// channels from each discriminator branch.
    pub fn new<R: Rng + ?Sized>(
        config: GeneratorConfig,
        feedback_channels: &[usize],
        dtype: DType,
        device: &Device,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if feedback_channels.len() != config.feedback_layers {
            return Err(Error::config(format!(
                "{} feedback channel widths given for {} feedback layers",
                feedback_channels.len(),
                config.feedback_layers
            )));
        }
        let mut params = ParamStore::new(dtype, device);
        let mut scope = Scope::new(&mut params, rng);
        let l = config.num_layers;
        let mut encoder = Vec::with_capacity(l);
        for i in 0..l {
            let in_ch = if i == 0 { INPUT_CHANNELS } else { config.encoder_channels(i - 1) };
            encoder.push(Conv2d::new(
                &mut scope.push(&format!("enc{i}")),
                in_ch,
                config.encoder_channels(i),
                4,
                2,
                1,
                false,
            )?);
        }
        let mut decoder = Vec::with_capacity(l);
        for j in 0..l {
            let out_ch = if j == 0 { OUTPUT_CHANNELS } else { config.encoder_channels(j - 1) };
            decoder.push(ConvTranspose2d::new(
                &mut scope.push(&format!("dec{j}")),
                config.junction_channels(j),
                out_ch,
                4,
                2,
                1,
                j == 0,
            )?);
        }
        let mut afm = Vec::with_capacity(config.feedback_layers);
        for (j, &fb) in feedback_channels.iter().enumerate() {
            let skip = config.junction_channels(j);
            afm.push(AfmTransform::new(&mut scope.push(&format!("afm{j}")), skip + 2 * fb, skip)?);
        }
        Ok(Self {
            config,
            feedback_channels: feedback_channels.to_vec(),
            encoder,
            decoder,
            afm,
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn feedback_channels(&self) -> &[usize] {
        &self.feedback_channels
    }

    pub fn encoder_layer(&self, i: usize) -> &Conv2d {
        &self.encoder[i]
    }

    pub fn decoder_layer(&self, j: usize) -> &ConvTranspose2d {
        &self.decoder[j]
    }

    pub fn afm_transform(&self, j: usize) -> &AfmTransform {
        &self.afm[j]
    }

    /// Names of the AFM parameters within [`Generator::params`].
    pub fn afm_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with("afm"))
            .cloned()
            .collect()
    }

    /// Runs the encoder; returns one feature per layer, finest first.
    pub fn encode(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = input.dims4()?;
        if c != INPUT_CHANNELS {
            return Err(Error::shape(format!("generator input needs 3 channels, got {c}")));
        }
        let l = self.config.num_layers;
        if (h >> l) == 0 || (w >> l) == 0 {
            return Err(Error::shape(format!(
                "{h}x{w} input is too small for {l} stride-2 layers"
            )));
        }
        let mut feats = Vec::with_capacity(l);
        let mut x = input.clone();
        for layer in &self.encoder {
            x = instance_norm(&layer.forward(&x)?)?.relu()?;
            feats.push(x.clone());
        }
        Ok(feats)
    }

    fn check_feedback(&self, fb: &FeedbackState, batch: usize) -> Result<()> {
        let r = self.config.feedback_layers;
        if fb.image_feats.len() != r || fb.seg_feats.len() != r {
            return Err(Error::shape(format!(
                "feedback carries {}/{} levels, expected {r}",
                fb.image_feats.len(),
                fb.seg_feats.len()
            )));
        }
        for (j, (g, s)) in fb.image_feats.iter().zip(&fb.seg_feats).enumerate() {
            for t in [g, s] {
                let (n, c, _, _) = t.dims4()?;
                if n != batch || c != self.feedback_channels[j] {
                    return Err(Error::shape(format!(
                        "feedback level {j} has shape {:?}, expected batch {batch} and {} channels",
                        t.dims(),
                        self.feedback_channels[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Decodes encoder features into a 6-channel output.
    ///
    /// `None` feedback bypasses every AFM layer.
    pub fn decode(&self, enc: &[Tensor], feedback: Option<&FeedbackState>) -> Result<GeneratorOutput> {
        let l = self.config.num_layers;
        if enc.len() != l {
            return Err(Error::shape(format!("expected {l} encoder features, got {}", enc.len())));
        }
        if let Some(fb) = feedback {
            self.check_feedback(fb, enc[0].dim(0)?)?;
        }
        let mut d: Option<Tensor> = None;
        for j in (0..l).rev() {
            let e = &enc[j];
            let (h, w) = spatial(e)?;
            let d_in = match d.take() {
                Some(t) => Some(resize_nearest(&t, h, w)?),
                None => None,
            };
            let junction = match feedback {
                Some(fb) if j < self.config.feedback_layers => {
                    let h_g = resize_nearest(&fb.image_feats[j], h, w)?;
                    let h_s = resize_nearest(&fb.seg_feats[j], h, w)?;
                    afm_fuse(e, d_in.as_ref(), &h_g, &h_s, self.config.alpha[j], &self.afm[j])?
                }
                _ => match d_in {
                    Some(d) => Tensor::cat(&[e, &d], 1)?,
                    None => e.clone(),
                },
            };
            let y = self.decoder[j].forward(&junction)?;
            d = Some(if j == 0 { y.tanh()? } else { instance_norm(&y)?.relu()? });
        }
        let raw = d.ok_or_else(|| Error::shape("generator has no layers"))?;
        GeneratorOutput::from_raw(raw)
    }

    pub fn forward(&self, input: &Tensor, feedback: Option<&FeedbackState>) -> Result<GeneratorOutput> {
        let enc = self.encode(input)?;
        let out = self.decode(&enc, feedback)?;
        let (_, _, h, w) = input.dims4()?;
        if spatial(&out.raw)? != (h, w) {
            return GeneratorOutput::from_raw(resize_nearest(&out.raw, h, w)?);
        }
        Ok(out)
    }
}
