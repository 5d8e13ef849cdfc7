use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use candle_core::Device;
use panogan::dataio::{load_manifest, prepare, DatasetManifest, ImageTensor, InputFormat, Split};
use panogan::metrics::{self, ClassifierOracle, SyntheticClassifier, UniformClassifier};
use panogan::training::{self, latest_checkpoint, Checkpoint, FitOptions, Trainer};
use panogan::RunConfig;
use serde::Serialize;

use crate::{Common, OracleArg, SplitArg};

pub const CACHE_ENV: &str = "PANOGAN_CACHE";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff", "webp"];
/// Pooling grid of the synthetic evaluation classifier.
const ORACLE_GRID: usize = 4;

/// Loads `--config` (or defaults), applies flag overrides and validates.
fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(k) = common.loops {
        config.train.feedback_loops = k;
    }
    if let Some(f) = common.input_format {
        config.data.input_format = f.into();
    }
    if let Some(e) = common.epochs {
        config.train.epochs = e;
    }
    config.validate()?;
    Ok(config)
}

fn require_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

/// Flag, then the config's `data_root`, then `$PANOGAN_CACHE`.
fn data_root(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    let root = flag
        .or_else(|| config.data_root.clone())
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .ok_or_else(|| anyhow!("no dataset root: pass --data, set data_root in the config or set {CACHE_ENV}"))?;
    if !root.is_dir() {
        bail!("dataset root {} is not a directory", root.display());
    }
    Ok(root)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes `bytes` unless the file already holds exactly them; returns whether it wrote.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if std::fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}

fn png_bytes(img: &ImageTensor) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::DynamicImage::ImageRgb8(img.to_rgb8()?).write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
    Ok(buf)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<bool> {
    write_if_changed(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

/// Image files in `dir` keyed by file stem, in sorted order.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !path.is_file() || !is_image {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("non UTF-8 file name {}", path.display()))?
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            bail!("{} and {} share the id {stem:?}", prev.display(), path.display());
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PreprocessedRecord {
    split: Split,
    id: String,
    input: PathBuf,
    panorama: Option<PathBuf>,
    segmentation: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PreprocessManifest {
    source: PathBuf,
    input_format: InputFormat,
    height: usize,
    records: Vec<PreprocessedRecord>,
}

pub fn preprocess(common: &Common, data: Option<PathBuf>, split: SplitArg) -> Result<()> {
    let mut config = resolve_config(common)?;
    let out = require_out(common)?;
    let root = data_root(data, &config)?;
    config.data_root = Some(root.clone());
    let splits: &[Split] = match split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &[Split::Train, Split::Test],
    };
    let manifests = splits
        .iter()
        .filter(|s| matches!(split, SplitArg::Train | SplitArg::Test) || root.join(s.as_str()).is_dir())
        .map(|&s| load_manifest(&root, s))
        .collect::<panogan::Result<Vec<DatasetManifest>>>()?;
    if manifests.is_empty() {
        bail!("{} holds neither a train nor a test split", root.display());
    }

    let (format, height) = (config.data.input_format, config.data.height);
    let mut records = Vec::new();
    let (mut written, mut changed) = (0usize, 0usize);
    for manifest in &manifests {
        let split_dir = out.join(manifest.split.as_str());
        for sub in ["input", "panorama", "segmentation"] {
            create_dir(&split_dir.join(sub))?;
        }
        for index in 0..manifest.len() {
            let sample = prepare(&manifest.load(index)?, format, height)?;
            let mut save = |sub: &str, img: &ImageTensor| -> Result<PathBuf> {
                let rel = PathBuf::from(manifest.split.as_str()).join(sub).join(format!("{}.png", sample.id));
                written += 1;
                changed += usize::from(write_if_changed(&out.join(&rel), &png_bytes(img)?)?);
                Ok(rel)
            };
            let input = save("input", &sample.input)?;
            let panorama = sample.panorama.as_ref().map(|p| save("panorama", p)).transpose()?;
            let segmentation = sample.segmentation.as_ref().map(|s| save("segmentation", s)).transpose()?;
            records.push(PreprocessedRecord {
                split: manifest.split,
                id: sample.id.clone(),
                input,
                panorama,
                segmentation,
            });
        }
    }
    let manifest = PreprocessManifest {
        source: root,
        input_format: format,
        height,
        records,
    };
    changed += usize::from(write_json(&out.join("manifest.json"), &manifest)?);
    changed += usize::from(write_json(&out.join("config.json"), &config)?);
    println!(
        "preprocessed {} records ({format}, height {height}): {} files, {changed} changed",
        manifest.records.len(),
        written + 2
    );
    Ok(())
}

pub fn train(common: &Common, data: Option<PathBuf>, checkpoint_every: Option<u64>, resume: bool) -> Result<()> {
    let out = require_out(common)?;
    let ckpt_dir = out.join("checkpoints");
    let device = Device::Cpu;
    let mut trainer = if resume {
        if common.config.is_some() || common.seed.is_some() || common.loops.is_some() || common.input_format.is_some() {
            bail!("only --epochs and --data may change when resuming");
        }
        let latest = latest_checkpoint(&ckpt_dir)?
            .ok_or_else(|| anyhow!("nothing to resume: no checkpoints in {}", ckpt_dir.display()))?;
        let mut trainer = Trainer::load(&latest, &device)?;
        if let Some(e) = common.epochs {
            trainer.set_epochs(e);
        }
        log::info!("resuming from {} at step {}", latest.display(), trainer.progress().step);
        trainer
    } else {
        let config = resolve_config(common)?;
        if latest_checkpoint(&ckpt_dir)?.is_some() {
            bail!("{} already holds checkpoints; pass --resume or choose another --out", ckpt_dir.display());
        }
        Trainer::new(config, &device)?
    };
    let root = data_root(data, trainer.config())?;
    let manifest = load_manifest(&root, Split::Train)?;
    if manifest.is_empty() {
        bail!("{} has no training records", root.display());
    }
    let mut config = trainer.config().clone();
    config.data_root = Some(root);

    create_dir(out)?;
    config.save(out.join("config.json"))?;
    let summary = trainer.fit(
        &manifest,
        &FitOptions {
            checkpoint_dir: Some(ckpt_dir),
            checkpoint_every,
            max_steps: None,
            log_path: Some(out.join("train_log.jsonl")),
        },
    )?;
    if let Some(last) = summary.log.last() {
        println!(
            "trained {} steps to step {}: L_total {:.6}, L_re {:.6}",
            summary.log.len(),
            last.step,
            last.report.breakdown.l_total,
            last.report.breakdown.l_re
        );
    } else {
        println!("no training steps to run; saved the model at step {}", summary.progress.step);
    }
    if let Some(path) = summary.final_checkpoint {
        println!("checkpoint: {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferenceRecord<'a> {
    checkpoint: &'a Path,
    step: u64,
    loops: usize,
    config: &'a RunConfig,
}

pub fn infer(common: &Common, checkpoint: &Path, input: &Path) -> Result<()> {
    let out = require_out(common)?;
    if !checkpoint.is_file() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    let device = Device::Cpu;
    let ckpt = Checkpoint::load(checkpoint, &device)?;
    let mut config = ckpt.config.clone();
    if let Some(f) = common.input_format {
        config.data.input_format = f.into();
    }
    let loops = common.loops.unwrap_or(config.train.feedback_loops);
    if loops > 0 && !ckpt.state.has_discriminators {
        bail!("{loops} feedback loops need discriminator weights, which this checkpoint lacks");
    }
    let dir = if input.join("aerial").is_dir() { input.join("aerial") } else { input.to_path_buf() };
    let files = list_images(&dir)?;
    if files.is_empty() {
        bail!("no images in {}", dir.display());
    }
    let model = ckpt.build_model(&device)?;

    for sub in ["panorama", "segmentation"] {
        create_dir(&out.join(sub))?;
    }
    for (id, path) in &files {
        let aerial = ImageTensor::load(path)?;
        let result = training::infer(&model, &config.data, std::slice::from_ref(&aerial), loops)?.remove(0);
        write_if_changed(&out.join("panorama").join(format!("{id}.png")), &png_bytes(&result.panorama)?)?;
        write_if_changed(&out.join("segmentation").join(format!("{id}.png")), &png_bytes(&result.segmentation)?)?;
    }
    write_json(
        &out.join("inference.json"),
        &InferenceRecord {
            checkpoint,
            step: ckpt.state.step,
            loops,
            config: &config,
        },
    )?;
    println!("generated {} panoramas with {loops} feedback loops into {}", files.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationRecord<'a> {
    fake: &'a Path,
    real: &'a Path,
    oracle: &'a str,
    classes: usize,
    seed: u64,
}

fn load_set(files: &BTreeMap<String, PathBuf>) -> Result<Vec<ImageTensor>> {
    files.values().map(|p| Ok(ImageTensor::load(p)?)).collect()
}

pub fn evaluate(common: &Common, fake: &Path, real: &Path, oracle: OracleArg, classes: usize) -> Result<()> {
    let out = require_out(common)?;
    let (fake_files, real_files) = (list_images(fake)?, list_images(real)?);
    if fake_files.len() != real_files.len() {
        bail!(
            "{} holds {} images but {} holds {}",
            fake.display(),
            fake_files.len(),
            real.display(),
            real_files.len()
        );
    }
    if fake_files.is_empty() {
        bail!("no images to evaluate in {}", fake.display());
    }
    if let Some(id) = fake_files.keys().find(|id| !real_files.contains_key(*id)) {
        bail!("{id:?} has no reference image in {}", real.display());
    }
    let seed = common.seed.unwrap_or(0);
    let (fakes, reals) = (load_set(&fake_files)?, load_set(&real_files)?);
    let oracle_impl: Box<dyn ClassifierOracle> = match oracle {
        OracleArg::Synthetic => Box::new(SyntheticClassifier::new(classes, fakes[0].channels(), ORACLE_GRID, seed)?),
        OracleArg::Uniform => Box::new(UniformClassifier { classes }),
    };
    let report = metrics::evaluate(&fakes, &reals, oracle_impl.as_ref())?;

    create_dir(out)?;
    write_if_changed(&out.join("metrics.json"), (report.to_json()? + "\n").as_bytes())?;
    write_if_changed(&out.join("metrics.csv"), report.to_csv().as_bytes())?;
    write_json(
        &out.join("evaluation.json"),
        &EvaluationRecord {
            fake,
            real,
            oracle: match oracle {
                OracleArg::Synthetic => "synthetic",
                OracleArg::Uniform => "uniform",
            },
            classes,
            seed,
        },
    )?;
    print!("{}", report.to_csv());
    Ok(())
}
