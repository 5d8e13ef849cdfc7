//! Adversarial, alignment and reconstruction objectives.
//!
//! All score maps are raw logits. They are clamped to `±LOGIT_CAP` before
//! the log-sigmoid so every loss stays finite.
//!
//! Sign convention: the discriminator side returns the value the
//! discriminators maximize,
//! `Σ_levels mean log σ(real) + mean log(1 − σ(fake))`, which is ≤ 0. The
//! generator side returns the non-saturating value the generator maximizes,
//! `Σ_levels mean log σ(fake)`.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::log_sigmoid;

pub const LOGIT_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Generator,
    Discriminator,
}

fn check_finite(name: &str, maps: &[Tensor]) -> Result<()> {
    for (i, m) in maps.iter().enumerate() {
        let s = m.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        if s.is_nan() {
            return Err(Error::Numeric(format!("{name} score map {i} contains NaN")));
        }
    }
    Ok(())
}

fn mean_log_sigmoid(logits: &Tensor, negate: bool) -> Result<Tensor> {
    let x = logits.clamp(-LOGIT_CAP, LOGIT_CAP)?;
    let x = if negate { x.neg()? } else { x };
    Ok(log_sigmoid(&x)?.mean_all()?)
}

fn gan_value(real: &[Tensor], fake: &[Tensor], side: Side, what: &str) -> Result<Tensor> {
    if fake.is_empty() {
        return Err(Error::shape(format!("{what}: no score maps")));
    }
    check_finite(what, fake)?;
    let mut terms = Vec::with_capacity(2 * fake.len());
    match side {
        Side::Discriminator => {
            if real.len() != fake.len() {
                return Err(Error::shape(format!(
                    "{what}: {} real vs {} fake score maps",
                    real.len(),
                    fake.len()
                )));
            }
            check_finite(what, real)?;
            for (r, f) in real.iter().zip(fake) {
                terms.push(mean_log_sigmoid(r, false)?);
                terms.push(mean_log_sigmoid(f, true)?);
            }
        }
        Side::Generator => {
            for f in fake {
                terms.push(mean_log_sigmoid(f, false)?);
            }
        }
    }
    Ok(Tensor::stack(&terms, 0)?.sum_all()?)
}

/// Real/fake objective summed over pyramid levels. Returns a scalar tensor.
///
/// `real_scores` is ignored on the generator side.
pub fn adversarial_loss(real_scores: &[Tensor], fake_scores: &[Tensor], side: Side) -> Result<Tensor> {
    gan_value(real_scores, fake_scores, side, "adversarial")
}

/// The same objective applied to alignment maps (real·real vs fake·real products).
pub fn alignment_loss(align_real: &[Tensor], align_fake: &[Tensor], side: Side) -> Result<Tensor> {
    gan_value(align_real, align_fake, side, "alignment")
}

/// Mean absolute error between two shape-matched tensors, as a scalar tensor.
pub fn mean_abs_error(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("mean absolute error: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Mean absolute error of the panorama plus mean absolute error of the segmentation map.
pub fn reconstruction_loss(
    fake_img: &Tensor,
    real_img: &Tensor,
    fake_seg: &Tensor,
    real_seg: &Tensor,
) -> Result<Tensor> {
    Ok((mean_abs_error(fake_img, real_img)? + mean_abs_error(fake_seg, real_seg)?)?)
}

/// Relative weights of the three loss families; all 1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adversarial: f64,
    pub alignment: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adversarial: 1.0,
            alignment: 1.0,
            reconstruction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Whether the feedback-free first pass counts as one of the averaged iterations.
    pub include_forward_pass: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            include_forward_pass: true,
        }
    }
}

/// Loss values of one generation iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLosses {
    pub adv_g: f64,
    pub adv_s: f64,
    pub align_g: f64,
    pub align_s: f64,
    pub recon_img: f64,
    pub recon_seg: f64,
}

impl IterationLosses {
    pub fn adversarial(&self) -> f64 {
        self.adv_g + self.adv_s
    }

    pub fn alignment(&self) -> f64 {
        self.align_g + self.align_s
    }

    pub fn reconstruction(&self) -> f64 {
        self.recon_img + self.recon_seg
    }

    pub fn is_finite(&self) -> bool {
        [self.adv_g, self.adv_s, self.align_g, self.align_s, self.recon_img, self.recon_seg]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_iteration: Vec<IterationLosses>,
    #[serde(rename = "L_adv")]
    pub l_adv: f64,
    #[serde(rename = "L_fa")]
    pub l_fa: f64,
    #[serde(rename = "L_re")]
    pub l_re: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

/// Indices of the iterations that enter the averages.
pub fn averaged_iterations(count: usize, include_forward_pass: bool) -> std::ops::Range<usize> {
    if include_forward_pass || count <= 1 {
        0..count
    } else {
        1..count
    }
}

/// Averages per-iteration losses and combines the three families.
///
/// With `include_forward_pass == false` the first (feedback-free) iteration is
/// left out of the averages unless it is the only one.
pub fn total_objective(
    per_iteration: &[IterationLosses],
    weights: LossWeights,
    include_forward_pass: bool,
) -> Result<LossBreakdown> {
    if per_iteration.is_empty() {
        return Err(Error::config("cannot average losses over zero iterations"));
    }
    let used = &per_iteration[averaged_iterations(per_iteration.len(), include_forward_pass)];
    let n = used.len() as f64;
    let mean = |f: fn(&IterationLosses) -> f64| used.iter().map(f).sum::<f64>() / n;
    let l_adv = mean(IterationLosses::adversarial);
    let l_fa = mean(IterationLosses::alignment);
    let l_re = mean(IterationLosses::reconstruction);
    let l_total = weights.adversarial * l_adv + weights.alignment * l_fa + weights.reconstruction * l_re;
    Ok(LossBreakdown {
        per_iteration: per_iteration.to_vec(),
        l_adv,
        l_fa,
        l_re,
        l_total,
    })
}
