//! Classifier-based scores over whole image sets.
//!
//! Each score has a `*_from_predictions` form on raw probability vectors and
//! a wrapper that runs the oracle over images first.

use serde::{Deserialize, Serialize};

use super::classifier::ClassifierOracle;
use crate::dataio::ImageTensor;
use crate::error::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InceptionMode {
    All,
    Top1,
    Top5,
}

impl InceptionMode {
    fn keep(self) -> Option<usize> {
        match self {
            Self::All => None,
            Self::Top1 => Some(1),
            Self::Top5 => Some(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyFilter {
    All,
    /// Only pairs whose real image has top-1 probability above 0.5.
    Conf50,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

fn check_distributions(preds: &[Vec<f64>]) -> Result<usize> {
    let k = preds
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::config("metric needs a non-empty image set"))?;
    for (i, p) in preds.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != k || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Numeric(format!(
                "prediction {i} is not a probability vector over {k} classes (sum {sum})"
            )));
        }
    }
    Ok(k)
}

/// Class indices by descending probability; ties keep the lower index first.
fn ranked(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

/// Keeps the `k` most probable classes and renormalizes.
pub fn restrict_top_k(p: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for &i in ranked(p).iter().take(k) {
        out[i] = p[i];
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// `Σ p log(p / q)` over the support of `p`, with `q` floored at [`KL_EPS`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.max(KL_EPS) / qi.max(KL_EPS)).ln())
        .sum();
    kl.max(0.0)
}

fn predict_all(images: &[ImageTensor], oracle: &dyn ClassifierOracle) -> Result<Vec<Vec<f64>>> {
    images.iter().map(|i| oracle.predict(i)).collect()
}

/// KL divergence of each fake prediction from the prediction for its paired
/// real image, summarized over pairs.
pub fn kl_from_predictions(fake: &[Vec<f64>], real: &[Vec<f64>]) -> Result<MeanStd> {
    if fake.len() != real.len() {
        return Err(Error::shape(format!(
            "KL score needs aligned sets, got {} fakes and {} reals",
            fake.len(),
            real.len()
        )));
    }
    if check_distributions(fake)? != check_distributions(real)? {
        return Err(Error::shape("fake and real predictions cover different class counts"));
    }
    let per_pair: Vec<f64> = fake.iter().zip(real).map(|(p, q)| kl_divergence(p, q)).collect();
    Ok(mean_std(&per_pair))
}

pub fn kl_score(fake: &[ImageTensor], real: &[ImageTensor], oracle: &dyn ClassifierOracle) -> Result<MeanStd> {
    kl_from_predictions(&predict_all(fake, oracle)?, &predict_all(real, oracle)?)
}

/// `exp(mean_i KL(p(y|x_i) ‖ p(y)))` with the marginal taken over the same set.
pub fn inception_from_predictions(preds: &[Vec<f64>], mode: InceptionMode) -> Result<f64> {
    let k = check_distributions(preds)?;
    let preds: Vec<Vec<f64>> = match mode.keep() {
        Some(keep) => preds.iter().map(|p| restrict_top_k(p, keep)).collect(),
        None => preds.to_vec(),
    };
    let mut marginal = vec![0.0; k];
    for p in &preds {
        marginal.iter_mut().zip(p).for_each(|(a, b)| *a += b / preds.len() as f64);
    }
    let mean_kl = preds.iter().map(|p| kl_divergence(p, &marginal)).sum::<f64>() / preds.len() as f64;
    Ok(mean_kl.exp())
}

pub fn inception_score(fake: &[ImageTensor], oracle: &dyn ClassifierOracle, mode: InceptionMode) -> Result<f64> {
    inception_from_predictions(&predict_all(fake, oracle)?, mode)
}

/// Percentage of pairs whose real top-1 class is among the fake's top-k
/// classes; `None` when the filter leaves no pairs.
pub fn accuracy_from_predictions(
    fake: &[Vec<f64>],
    real: &[Vec<f64>],
    top_k: usize,
    filter: AccuracyFilter,
) -> Result<Option<f64>> {
    if fake.len() != real.len() {
        return Err(Error::shape(format!(
            "prediction accuracy needs aligned sets, got {} fakes and {} reals",
            fake.len(),
            real.len()
        )));
    }
    if top_k == 0 {
        return Err(Error::config("top-k accuracy needs k >= 1"));
    }
    if check_distributions(fake)? != check_distributions(real)? {
        return Err(Error::shape("fake and real predictions cover different class counts"));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (f, r) in fake.iter().zip(real) {
        let label = ranked(r)[0];
        if filter == AccuracyFilter::Conf50 && r[label] <= 0.5 {
            continue;
        }
        total += 1;
        if ranked(f).iter().take(top_k).any(|&c| c == label) {
            hits += 1;
        }
    }
    Ok((total > 0).then(|| 100.0 * hits as f64 / total as f64))
}

pub fn prediction_accuracy(
    fake: &[ImageTensor],
    real: &[ImageTensor],
    oracle: &dyn ClassifierOracle,
    top_k: usize,
    filter: AccuracyFilter,
) -> Result<Option<f64>> {
    if fake.len() != real.len() {
        return Err(Error::shape(format!(
            "prediction accuracy needs aligned sets, got {} fakes and {} reals",
            fake.len(),
            real.len()
        )));
    }
    accuracy_from_predictions(&predict_all(fake, oracle)?, &predict_all(real, oracle)?, top_k, filter)
}
