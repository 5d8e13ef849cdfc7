//! Loss evaluation over a full feedback trace and the alternating update.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataio::TensorBatch;
use crate::discriminator::{alignment_scores, PyramidFeatures};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss, alignment_loss, averaged_iterations, mean_abs_error, total_objective, IterationLosses,
    LossBreakdown, LossConfig, LossWeights, Side,
};
use crate::model::PanoGan;

use super::optim::Adam;

/// Which graph a loss evaluation builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Objective values with fakes detached; gradients reach only the discriminators.
    Discriminator,
    /// Non-saturating generator values with real features detached; gradients
    /// reach the generator through every feedback loop.
    Generator,
    /// Objective values with nothing detached.
    Objective,
}

/// Differentiable loss terms of one iteration.
#[derive(Debug, Clone)]
pub struct IterationTerms {
    pub adv_g: Tensor,
    pub adv_s: Tensor,
    pub align_g: Tensor,
    pub align_s: Tensor,
    pub recon_img: Tensor,
    pub recon_seg: Tensor,
    /// Objective-form values of this iteration, for reporting.
    pub objective: IterationLosses,
}

impl IterationTerms {
    fn named(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("adv_g", &self.adv_g),
            ("adv_s", &self.adv_s),
            ("align_g", &self.align_g),
            ("align_s", &self.align_s),
            ("recon_img", &self.recon_img),
            ("recon_seg", &self.recon_seg),
        ]
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Real-pair features from both discriminators.
struct RealFeatures {
    image: PyramidFeatures,
    seg: PyramidFeatures,
    image_scores: Vec<Tensor>,
    seg_scores: Vec<Tensor>,
    /// `S = h_g ⊗ h_s`; shared by both branches since the product commutes.
    align: Vec<Tensor>,
}

fn real_features(model: &PanoGan, batch: &TensorBatch, detach: bool) -> Result<RealFeatures> {
    let d = model.require_discriminators()?;
    let mut image = d.image.extract_pyramid(&batch.input, &batch.panorama)?;
    let mut seg = d.segmentation.extract_pyramid(&batch.input, &batch.segmentation)?;
    if detach {
        image = image.detach();
        seg = seg.detach();
    }
    let image_scores = d.image.realfake_scores(&image)?;
    let seg_scores = d.segmentation.realfake_scores(&seg)?;
    let align = alignment_scores(&image, &seg)?;
    Ok(RealFeatures {
        image,
        seg,
        image_scores,
        seg_scores,
        align,
    })
}

/// Loss terms of every iteration of a `loops`-step trace.
pub fn iteration_terms(model: &PanoGan, batch: &TensorBatch, loops: usize, pass: Pass) -> Result<Vec<IterationTerms>> {
    let d = model.require_discriminators()?;
    let real = real_features(model, batch, pass == Pass::Generator)?;
    let trace = model.trace(&batch.input, loops, pass != Pass::Discriminator)?;
    let mut terms = Vec::with_capacity(trace.outputs.len());
    for (t, out) in trace.outputs.iter().enumerate() {
        let (out, hg, hs) = if pass == Pass::Discriminator {
            let out = out.detach();
            let (hg, hs) = model.discriminate(&batch.input, &out)?;
            (out, hg, hs)
        } else {
            (out.clone(), trace.image_feats[t].clone(), trace.seg_feats[t].clone())
        };
        let fake_g = d.image.realfake_scores(&hg)?;
        let fake_s = d.segmentation.realfake_scores(&hs)?;
        // Ŝ_g = ĥ_g ⊗ h_s and Ŝ_s = ĥ_s ⊗ h_g
        let align_fake_g = alignment_scores(&hg, &real.seg)?;
        let align_fake_s = alignment_scores(&hs, &real.image)?;
        let terms_for = |side| -> Result<[Tensor; 4]> {
            Ok([
                adversarial_loss(&real.image_scores, &fake_g, side)?,
                adversarial_loss(&real.seg_scores, &fake_s, side)?,
                alignment_loss(&real.align, &align_fake_g, side)?,
                alignment_loss(&real.align, &align_fake_s, side)?,
            ])
        };
        let recon_img = mean_abs_error(&out.panorama, &batch.panorama)?;
        let recon_seg = mean_abs_error(&out.segmentation, &batch.segmentation)?;
        let side = if pass == Pass::Generator { Side::Generator } else { Side::Discriminator };
        let [adv_g, adv_s, align_g, align_s] = terms_for(side)?;
        let objective_terms = if side == Side::Discriminator {
            [adv_g.clone(), adv_s.clone(), align_g.clone(), align_s.clone()]
        } else {
            terms_for(Side::Discriminator)?
        };
        let objective = IterationLosses {
            adv_g: scalar(&objective_terms[0])?,
            adv_s: scalar(&objective_terms[1])?,
            align_g: scalar(&objective_terms[2])?,
            align_s: scalar(&objective_terms[3])?,
            recon_img: scalar(&recon_img)?,
            recon_seg: scalar(&recon_seg)?,
        };
        terms.push(IterationTerms {
            adv_g,
            adv_s,
            align_g,
            align_s,
            recon_img,
            recon_seg,
            objective,
        });
    }
    Ok(terms)
}

/// Weighted, iteration-averaged combination of `terms` as a scalar tensor.
///
/// `signs` multiply the adversarial+alignment families and the reconstruction
/// family respectively, so one function serves every player.
fn combine(terms: &[IterationTerms], weights: LossWeights, include_forward_pass: bool, signs: (f64, f64)) -> Result<Tensor> {
    let used = &terms[averaged_iterations(terms.len(), include_forward_pass)];
    let mut parts = Vec::with_capacity(used.len());
    for it in used {
        let adv = ((&it.adv_g + &it.adv_s)? * (signs.0 * weights.adversarial))?;
        let fa = ((&it.align_g + &it.align_s)? * (signs.0 * weights.alignment))?;
        let re = ((&it.recon_img + &it.recon_seg)? * (signs.1 * weights.reconstruction))?;
        parts.push(((adv + fa)? + re)?);
    }
    Ok(Tensor::stack(&parts, 0)?.mean_all()?)
}

/// `L_total` as a differentiable tensor (adversarial and alignment in objective form).
pub fn objective_tensor(terms: &[IterationTerms], config: &LossConfig) -> Result<Tensor> {
    combine(terms, config.weights, config.include_forward_pass, (1.0, 1.0))
}

/// What the discriminators minimize: the negated adversarial and alignment objective.
pub fn discriminator_loss(terms: &[IterationTerms], config: &LossConfig) -> Result<Tensor> {
    let w = LossWeights {
        reconstruction: 0.0,
        ..config.weights
    };
    combine(terms, w, config.include_forward_pass, (-1.0, 0.0))
}

/// What the generator minimizes: negated non-saturating values plus reconstruction.
pub fn generator_loss(terms: &[IterationTerms], config: &LossConfig) -> Result<Tensor> {
    combine(terms, config.weights, config.include_forward_pass, (-1.0, 1.0))
}

/// Losses reported for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
    pub g_loss: f64,
    pub d_loss: f64,
}

fn tensor_stats(name: &str, t: &Tensor) -> String {
    let summary = || -> Result<String> {
        let v: Vec<f64> = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let nan = v.iter().filter(|x| x.is_nan()).count();
        let inf = v.iter().filter(|x| x.is_infinite()).count();
        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        let (lo, hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
        Ok(format!(
            "{name}{:?}: min {lo:.6e} max {hi:.6e} mean {mean:.6e} nan {nan} inf {inf}",
            t.dims()
        ))
    };
    summary().unwrap_or_else(|e| format!("{name}: unavailable ({e})"))
}

fn ensure_finite(what: &str, loss: &Tensor, terms: &[IterationTerms], batch: &TensorBatch) -> Result<f64> {
    let v = scalar(loss)?;
    if v.is_finite() {
        return Ok(v);
    }
    let mut dump = vec![format!("{what} is {v} on batch {:?}", batch.ids)];
    for (t, it) in terms.iter().enumerate() {
        for (name, tensor) in it.named() {
            dump.push(tensor_stats(&format!("iteration {t} {name}"), tensor));
        }
    }
    for (name, tensor) in [("input", &batch.input), ("panorama", &batch.panorama), ("segmentation", &batch.segmentation)] {
        dump.push(tensor_stats(name, tensor));
    }
    Err(Error::Numeric(dump.join("\n")))
}

/// Updates both discriminators on detached fakes; returns their loss.
pub fn discriminator_step(
    model: &PanoGan,
    opt_d: &mut Adam,
    batch: &TensorBatch,
    loops: usize,
    config: &LossConfig,
) -> Result<f64> {
    let discriminators = model.require_discriminators()?;
    let terms = iteration_terms(model, batch, loops, Pass::Discriminator)?;
    let loss_t = discriminator_loss(&terms, config)?;
    let loss = ensure_finite("discriminator loss", &loss_t, &terms, batch)?;
    let grads = loss_t.backward()?;
    opt_d.step(
        &[
            ("D_g/", discriminators.image.params()),
            ("D_s/", discriminators.segmentation.params()),
        ],
        &grads,
    )?;
    Ok(loss)
}

/// Updates the generator through all `loops` feedback iterations; returns its
/// loss and the objective-form breakdown of the same forward pass.
pub fn generator_step(
    model: &PanoGan,
    opt_g: &mut Adam,
    batch: &TensorBatch,
    loops: usize,
    config: &LossConfig,
) -> Result<(f64, LossBreakdown)> {
    let terms = iteration_terms(model, batch, loops, Pass::Generator)?;
    let loss_t = generator_loss(&terms, config)?;
    let loss = ensure_finite("generator loss", &loss_t, &terms, batch)?;
    let grads = loss_t.backward()?;
    opt_g.step(&[("G/", model.generator().params())], &grads)?;
    let per_iteration: Vec<IterationLosses> = terms.iter().map(|t| t.objective).collect();
    let breakdown = total_objective(&per_iteration, config.weights, config.include_forward_pass)?;
    Ok((loss, breakdown))
}

/// One discriminator half-step followed by one generator half-step on the same batch.
pub fn train_step(
    model: &PanoGan,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    batch: &TensorBatch,
    loops: usize,
    config: &LossConfig,
) -> Result<StepReport> {
    let d_loss = discriminator_step(model, opt_d, batch, loops, config)?;
    let (g_loss, breakdown) = generator_step(model, opt_g, batch, loops, config)?;
    Ok(StepReport {
        breakdown,
        g_loss,
        d_loss,
    })
}

/// Iteration-averaged objective of a batch without any update.
pub fn evaluate_losses(model: &PanoGan, batch: &TensorBatch, loops: usize, config: &LossConfig) -> Result<LossBreakdown> {
    let per_iteration = if model.discriminators().is_some() {
        iteration_terms(model, batch, loops, Pass::Objective)?
            .iter()
            .map(|t| t.objective)
            .collect()
    } else {
        reconstruction_only(model, batch, loops)?
    };
    total_objective(&per_iteration, config.weights, config.include_forward_pass)
}

/// Reconstruction values of each iteration; adversarial terms are left at zero.
pub fn reconstruction_only(model: &PanoGan, batch: &TensorBatch, loops: usize) -> Result<Vec<IterationLosses>> {
    model
        .generate_iterative(&batch.input, loops)?
        .iter()
        .map(|out| {
            Ok(IterationLosses {
                recon_img: scalar(&mean_abs_error(&out.panorama, &batch.panorama)?)?,
                recon_seg: scalar(&mean_abs_error(&out.segmentation, &batch.segmentation)?)?,
                ..Default::default()
            })
        })
        .collect()
}
