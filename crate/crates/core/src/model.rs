//! Generator plus image and segmentation discriminators, and the iterative
//! generate → discriminate → feed back loop that ties them together.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscriminatorConfig, PyramidDiscriminator, PyramidFeatures};
use crate::error::{Error, Result};
use crate::generator::{FeedbackState, Generator, GeneratorConfig, GeneratorOutput};
use crate::nn::resize_nearest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.feedback_layers != self.discriminator.num_scales {
            return Err(Error::config(format!(
                "generator feedback_layers ({}) must equal discriminator num_scales ({})",
                self.generator.feedback_layers, self.discriminator.num_scales
            )));
        }
        Ok(())
    }

    /// Checks that a `height × 4·height` panorama fits both networks.
    pub fn validate_resolution(&self, height: usize) -> Result<()> {
        let deepest = self.generator.num_layers.max(self.discriminator.num_scales);
        if height == 0 || (height >> deepest) == 0 {
            return Err(Error::config(format!(
                "panorama height {height} is too small for {deepest} stride-2 layers"
            )));
        }
        Ok(())
    }
}

/// The image (`D_g`) and segmentation (`D_s`) discriminators.
#[derive(Debug, Clone)]
pub struct Discriminators {
    pub image: PyramidDiscriminator,
    pub segmentation: PyramidDiscriminator,
}

/// Outputs and fake-candidate features of every iteration.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub outputs: Vec<GeneratorOutput>,
    /// `D_g` pyramid of each output's panorama (only iterations whose features were computed).
    pub image_feats: Vec<PyramidFeatures>,
    /// `D_s` pyramid of each output's segmentation map.
    pub seg_feats: Vec<PyramidFeatures>,
}

#[derive(Debug, Clone)]
pub struct PanoGan {
    config: ModelConfig,
    generator: Generator,
    discriminators: Option<Discriminators>,
}

/// ChaCha streams used for initialization, so each network's weights depend only on the seed.
const GENERATOR_STREAM: u64 = 0;
const IMAGE_D_STREAM: u64 = 1;
const SEG_D_STREAM: u64 = 2;

impl PanoGan {
    /// Builds all three networks with N(0, 0.02) weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let rng = |stream| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        let generator = Generator::new(
            config.generator.clone(),
            &config.discriminator.all_level_channels(),
            dtype,
            device,
            &mut rng(GENERATOR_STREAM),
        )?;
        let image = PyramidDiscriminator::new(config.discriminator.clone(), dtype, device, &mut rng(IMAGE_D_STREAM))?;
        let segmentation =
            PyramidDiscriminator::new(config.discriminator.clone(), dtype, device, &mut rng(SEG_D_STREAM))?;
        Ok(Self {
            config,
            generator,
            discriminators: Some(Discriminators { image, segmentation }),
        })
    }

    /// Drops the discriminators, leaving a model that can only run feedback-free passes.
    pub fn without_discriminators(mut self) -> Self {
        self.discriminators = None;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminators(&self) -> Option<&Discriminators> {
        self.discriminators.as_ref()
    }

    pub fn require_discriminators(&self) -> Result<&Discriminators> {
        self.discriminators
            .as_ref()
            .ok_or_else(|| Error::config("feedback loops need discriminator parameters, which this model lacks"))
    }

    /// Fake-candidate pyramids for one output, from both discriminators.
    pub fn discriminate(&self, aerial: &Tensor, output: &GeneratorOutput) -> Result<(PyramidFeatures, PyramidFeatures)> {
        let d = self.require_discriminators()?;
        Ok((
            d.image.extract_pyramid(aerial, &output.panorama)?,
            d.segmentation.extract_pyramid(aerial, &output.segmentation)?,
        ))
    }

    /// Runs the initial pass plus `loops` feedback iterations.
    ///
    /// With `features_of_last` the discriminator features of the final output
    /// are computed as well (the losses need them, plain inference does not).
    pub fn trace(&self, aerial: &Tensor, loops: usize, features_of_last: bool) -> Result<IterationTrace> {
        if loops > 0 || features_of_last {
            self.require_discriminators()?;
        }
        let (_, _, h, w) = aerial.dims4()?;
        let enc = self.generator.encode(aerial)?;
        let decode = |fb: Option<&FeedbackState>| -> Result<GeneratorOutput> {
            let out = self.generator.decode(&enc, fb)?;
            let (_, _, oh, ow) = out.raw.dims4()?;
            if (oh, ow) == (h, w) {
                Ok(out)
            } else {
                GeneratorOutput::from_raw(resize_nearest(&out.raw, h, w)?)
            }
        };
        let mut outputs = vec![decode(None)?];
        let mut image_feats = Vec::with_capacity(loops + 1);
        let mut seg_feats = Vec::with_capacity(loops + 1);
        for t in 1..=loops {
            let (hg, hs) = self.discriminate(aerial, &outputs[t - 1])?;
            let feedback = FeedbackState {
                image_feats: hg.levels.clone(),
                seg_feats: hs.levels.clone(),
                iteration: t - 1,
            };
            outputs.push(decode(Some(&feedback))?);
            image_feats.push(hg);
            seg_feats.push(hs);
        }
        if features_of_last {
            let (hg, hs) = self.discriminate(aerial, &outputs[loops])?;
            image_feats.push(hg);
            seg_feats.push(hs);
        }
        Ok(IterationTrace {
            outputs,
            image_feats,
            seg_feats,
        })
    }

    /// All `loops + 1` outputs; element 0 is the feedback-free pass.
    pub fn generate_iterative(&self, aerial: &Tensor, loops: usize) -> Result<Vec<GeneratorOutput>> {
        Ok(self.trace(aerial, loops, false)?.outputs)
    }

    /// Final output after `loops` feedback iterations.
    pub fn infer(&self, aerial: &Tensor, loops: usize) -> Result<GeneratorOutput> {
        let mut outputs = self.generate_iterative(aerial, loops)?;
        Ok(outputs.pop().expect("at least the initial output").detach())
    }
}
