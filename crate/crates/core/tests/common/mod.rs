#![allow(dead_code)]

use panogan::dataio::{synthetic, SamplePair, TensorBatch};
use panogan::discriminator::DiscriminatorConfig;
use panogan::generator::{GeneratorConfig, Normalization};
use panogan::{ModelConfig, Precision, RunConfig};
use candle_core::Device;

/// A scaled-down run: `layers` generator levels, `scales` pyramid levels.
pub fn toy_config(height: usize, layers: usize, scales: usize, base: usize, precision: Precision) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.height = height;
    c.model = ModelConfig {
        generator: GeneratorConfig {
            num_layers: layers,
            base_channels: base,
            max_channel_multiplier: 8,
            feedback_layers: scales,
            alpha: vec![0.5; scales],
            normalization: Normalization::Instance,
        },
        discriminator: DiscriminatorConfig {
            num_scales: scales,
            base_channels: base,
            max_channel_multiplier: 8,
            normalization: Normalization::Instance,
        },
        precision,
    };
    c
}

/// Synthetic scenes with aerial side equal to the panorama height.
pub fn pairs(count: usize, height: usize, seed: u64) -> Vec<SamplePair> {
    synthetic::generate(count, height, height, seed).unwrap()
}

pub fn batch(config: &RunConfig, pairs: &[SamplePair]) -> TensorBatch {
    TensorBatch::from_pairs(pairs, &config.data, config.model.precision.dtype(), &Device::Cpu).unwrap()
}
