use serde::{Deserialize, Serialize};

use super::classifier::ClassifierOracle;
use super::pixel::{psnr, sharpness_difference, ssim};
use super::semantic::{accuracy_from_predictions, inception_from_predictions, kl_from_predictions, AccuracyFilter, InceptionMode};
use crate::dataio::ImageTensor;
use crate::error::{Error, Result};

/// Serializes infinite values as the strings `"inf"` / `"-inf"`, which JSON cannot represent.
mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// Dataset-level scores, in the column order of the usual comparison table.
///
/// PSNR and SD average only finite per-image values; images with a `+inf`
/// sentinel are counted separately, and the aggregate is `+inf` only when
/// every image is a sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub inception_all: f64,
    pub inception_top1: f64,
    pub inception_top5: f64,
    pub accuracy_top1_all: Option<f64>,
    pub accuracy_top5_all: Option<f64>,
    pub accuracy_top1_05: Option<f64>,
    pub accuracy_top5_05: Option<f64>,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub ssim: f64,
    #[serde(with = "float_or_inf")]
    pub psnr: f64,
    #[serde(with = "float_or_inf")]
    pub sd: f64,
    pub images: usize,
    pub psnr_infinite: usize,
    pub sd_infinite: usize,
}

pub const CSV_HEADER: &str = "inception_all,inception_top1,inception_top5,\
accuracy_top1_all,accuracy_top5_all,accuracy_top1_05,accuracy_top5_05,\
kl_mean,kl_std,ssim,psnr,sd,images,psnr_infinite,sd_infinite";

fn csv_float(v: f64) -> String {
    match v {
        f64::INFINITY => "inf".into(),
        f64::NEG_INFINITY => "-inf".into(),
        v => format!("{v}"),
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

impl MetricsReport {
    /// One data row matching [`CSV_HEADER`]; empty cells mark undefined accuracies.
    pub fn csv_row(&self) -> String {
        [
            csv_float(self.inception_all),
            csv_float(self.inception_top1),
            csv_float(self.inception_top5),
            csv_opt(self.accuracy_top1_all),
            csv_opt(self.accuracy_top5_all),
            csv_opt(self.accuracy_top1_05),
            csv_opt(self.accuracy_top5_05),
            csv_float(self.kl_mean),
            csv_float(self.kl_std),
            csv_float(self.ssim),
            csv_float(self.psnr),
            csv_float(self.sd),
            self.images.to_string(),
            self.psnr_infinite.to_string(),
            self.sd_infinite.to_string(),
        ]
        .join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean of the finite values and the number of `+inf` sentinels skipped.
fn finite_mean(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let skipped = values.len() - finite.len();
    if finite.is_empty() {
        return (f64::INFINITY, skipped);
    }
    (finite.iter().sum::<f64>() / finite.len() as f64, skipped)
}

/// Scores generated images against references aligned by index.
pub fn evaluate(fake: &[ImageTensor], real: &[ImageTensor], oracle: &dyn ClassifierOracle) -> Result<MetricsReport> {
    if fake.len() != real.len() {
        return Err(Error::shape(format!(
            "evaluation needs one reference per generated image, got {} generated and {} references",
            fake.len(),
            real.len()
        )));
    }
    if fake.is_empty() {
        return Err(Error::config("evaluation needs at least one image"));
    }
    let pf = fake.iter().map(|i| oracle.predict(i)).collect::<Result<Vec<_>>>()?;
    let pr = real.iter().map(|i| oracle.predict(i)).collect::<Result<Vec<_>>>()?;
    let kl = kl_from_predictions(&pf, &pr)?;
    let mut ssims = Vec::with_capacity(fake.len());
    let mut psnrs = Vec::with_capacity(fake.len());
    let mut sds = Vec::with_capacity(fake.len());
    for (f, r) in fake.iter().zip(real) {
        ssims.push(ssim(f, r)?);
        psnrs.push(psnr(f, r)?);
        sds.push(sharpness_difference(f, r)?);
    }
    let (psnr, psnr_infinite) = finite_mean(&psnrs);
    let (sd, sd_infinite) = finite_mean(&sds);
    let acc = |k, filter| accuracy_from_predictions(&pf, &pr, k, filter);
    Ok(MetricsReport {
        inception_all: inception_from_predictions(&pf, InceptionMode::All)?,
        inception_top1: inception_from_predictions(&pf, InceptionMode::Top1)?,
        inception_top5: inception_from_predictions(&pf, InceptionMode::Top5)?,
        accuracy_top1_all: acc(1, AccuracyFilter::All)?,
        accuracy_top5_all: acc(5, AccuracyFilter::All)?,
        accuracy_top1_05: acc(1, AccuracyFilter::Conf50)?,
        accuracy_top5_05: acc(5, AccuracyFilter::Conf50)?,
        kl_mean: kl.mean,
        kl_std: kl.std,
        ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
        psnr,
        sd,
        images: fake.len(),
        psnr_infinite,
        sd_infinite,
    })
}
