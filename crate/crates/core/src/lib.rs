//! Cross-view panorama synthesis with adversarial feedback.
//!
//! An aerial image is widened to panorama shape ([`dataio::InputFormat`]),
//! encoded, and decoded into a 6-channel output holding a panorama and its
//! segmentation map. Two structurally identical pyramid discriminators judge
//! the image and segmentation branches; their multi-scale features are fed
//! back into the decoder on the next iteration and are also multiplied
//! across branches into alignment score maps.

pub mod config;
pub mod dataio;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{ModelConfig, PanoGan, Precision};
