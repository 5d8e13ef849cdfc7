//! Evaluation metrics: pixel similarity and classifier-based set scores.

mod classifier;
mod pixel;
mod report;
mod semantic;

pub use classifier::{ClassifierOracle, SyntheticClassifier, UniformClassifier};
pub use pixel::{gaussian_window, psnr, sharpness_difference, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{evaluate, MetricsReport, CSV_HEADER};
pub use semantic::{
    accuracy_from_predictions, inception_from_predictions, inception_score, kl_divergence, kl_from_predictions,
    kl_score, prediction_accuracy, restrict_top_k, AccuracyFilter, InceptionMode, MeanStd, KL_EPS,
};
