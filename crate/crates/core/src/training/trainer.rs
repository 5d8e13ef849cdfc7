use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_name, Checkpoint};
use super::optim::Adam;
use super::step::{train_step, StepReport};
use crate::config::RunConfig;
use crate::dataio::{epoch_batches, DataConfig, ImageTensor, SampleSource, TensorBatch};
use crate::error::{Error, Result};
use crate::model::PanoGan;

/// Where the next training step falls in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    /// Completed training steps.
    pub step: u64,
    pub epoch: u64,
    /// Index of the next batch within `epoch`.
    pub batch_in_epoch: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    #[serde(flatten)]
    pub report: StepReport,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Directory for `step-NNNNNNNN.safetensors` files; nothing is saved when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Save every this many steps, in addition to the end of the run.
    pub checkpoint_every: Option<u64>,
    /// Stop once this many total steps have completed.
    pub max_steps: Option<u64>,
    /// Line-delimited JSON log; records beyond the current step are dropped first.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    /// Records of the steps run by this call.
    pub log: Vec<LogRecord>,
    pub final_checkpoint: Option<PathBuf>,
    pub progress: Progress,
}

/// Owns the model, both optimizers and the run position.
pub struct Trainer {
    config: RunConfig,
    model: PanoGan,
    opt_g: Adam,
    opt_d: Adam,
    progress: Progress,
    device: Device,
}

impl Trainer {
    pub fn new(config: RunConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let model = PanoGan::new(config.model.clone(), config.train.seed, device)?;
        Ok(Self {
            opt_g: Adam::new(config.train.generator_adam())?,
            opt_d: Adam::new(config.train.discriminator_adam())?,
            config,
            model,
            progress: Progress::default(),
            device: device.clone(),
        })
    }

    /// Restores a full training checkpoint (discriminators and optimizer state required).
    pub fn from_checkpoint(ckpt: &Checkpoint, device: &Device) -> Result<Self> {
        if !ckpt.state.has_discriminators || !ckpt.state.has_optimizer {
            return Err(Error::Checkpoint(
                "resuming needs discriminator parameters and optimizer state".into(),
            ));
        }
        let mut trainer = Self::new(ckpt.config.clone(), device)?;
        trainer.model = ckpt.build_model(device)?;
        trainer.opt_g.restore(ckpt.state.opt_g_steps, &ckpt.generator_optimizer())?;
        trainer.opt_d.restore(ckpt.state.opt_d_steps, &ckpt.discriminator_optimizer())?;
        trainer.progress = Progress {
            step: ckpt.state.step,
            epoch: ckpt.state.epoch,
            batch_in_epoch: ckpt.state.batch_in_epoch,
        };
        Ok(trainer)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, device)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &PanoGan {
        &self.model
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    /// Extends (or shortens) the run; everything else about a restored run is fixed.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.train.epochs = epochs;
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_model(&self.model, &self.config)?;
        ckpt.set_optimizers(self.opt_g.state(), self.opt_d.state());
        ckpt.state.step = self.progress.step;
        ckpt.state.epoch = self.progress.epoch;
        ckpt.state.batch_in_epoch = self.progress.batch_in_epoch;
        ckpt.state.opt_g_steps = self.opt_g.steps();
        ckpt.state.opt_d_steps = self.opt_d.steps();
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// One alternating update on `batch`. Does not move the epoch position.
    pub fn step(&mut self, batch: &TensorBatch) -> Result<StepReport> {
        let report = train_step(
            &self.model,
            &mut self.opt_g,
            &mut self.opt_d,
            batch,
            self.config.train.feedback_loops,
            &self.config.loss,
        )?;
        self.progress.step += 1;
        Ok(report)
    }

    fn save_into(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(checkpoint_name(self.progress.step));
        self.save(&path)?;
        Ok(path)
    }

    /// Runs the remaining `epochs × batches` steps over `source`.
    ///
    /// A trainer restored from a checkpoint continues at its stored epoch and
    /// batch, so the steps it produces equal those of an uninterrupted run.
    pub fn fit<S: SampleSource + ?Sized>(&mut self, source: &S, options: &FitOptions) -> Result<FitSummary> {
        if source.is_empty() {
            return Err(Error::Integrity("training set is empty".into()));
        }
        let mut log_file = match &options.log_path {
            Some(p) => Some(open_log(p, self.progress.step)?),
            None => None,
        };
        let train = self.config.train.clone();
        let dtype = self.model.dtype();
        let mut log = Vec::new();
        'epochs: while self.progress.epoch < train.epochs as u64 {
            let batches = epoch_batches(source.len(), train.batch_size, train.seed, self.progress.epoch, train.shuffle)?;
            let mut epoch_losses = Vec::new();
            while (self.progress.batch_in_epoch as usize) < batches.len() {
                if options.max_steps.is_some_and(|m| self.progress.step >= m) {
                    break 'epochs;
                }
                let epoch = self.progress.epoch;
                let indices = &batches[self.progress.batch_in_epoch as usize];
                let pairs = indices.iter().map(|&i| source.sample(i)).collect::<Result<Vec<_>>>()?;
                let batch = TensorBatch::from_pairs(&pairs, &self.config.data, dtype, &self.device)?;
                let report = self.step(&batch)?;
                self.progress.batch_in_epoch += 1;
                if self.progress.batch_in_epoch as usize == batches.len() {
                    self.progress.epoch += 1;
                    self.progress.batch_in_epoch = 0;
                }
                let record = LogRecord {
                    step: self.progress.step,
                    epoch,
                    report,
                };
                if let (Some(f), Some(p)) = (log_file.as_mut(), &options.log_path) {
                    writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(p, e))?;
                }
                epoch_losses.push(record.report.breakdown.l_total);
                log.push(record);
                if let (Some(dir), Some(every)) = (&options.checkpoint_dir, options.checkpoint_every) {
                    if every > 0 && self.progress.step % every == 0 {
                        self.save_into(dir)?;
                    }
                }
                if self.progress.batch_in_epoch == 0 {
                    break;
                }
            }
            if !epoch_losses.is_empty() {
                let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
                log::info!(
                    "epoch {} finished at step {}: mean L_total {mean:.6}",
                    self.progress.epoch,
                    self.progress.step
                );
            }
        }
        if let Some(f) = log_file.as_mut() {
            f.flush().map_err(|e| Error::io(options.log_path.as_deref().unwrap_or(Path::new("")), e))?;
        }
        let final_checkpoint = match &options.checkpoint_dir {
            Some(dir) => Some(self.save_into(dir)?),
            None => None,
        };
        Ok(FitSummary {
            log,
            final_checkpoint,
            progress: self.progress,
        })
    }
}

/// Opens the log for appending after dropping records past `step`.
fn open_log(path: &Path, step: u64) -> Result<std::fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut kept = Vec::new();
    if step > 0 && path.exists() {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line)?;
            if rec.step <= step {
                kept.push(line);
            }
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for line in kept {
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

/// Final-iteration outputs for one aerial image, in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub panorama: ImageTensor,
    pub segmentation: ImageTensor,
}

/// Generates panoramas and segmentation maps for raw aerial images after `loops` feedback iterations.
pub fn infer(model: &PanoGan, data: &DataConfig, aerials: &[ImageTensor], loops: usize) -> Result<Vec<Inference>> {
    if loops > 0 {
        model.require_discriminators()?;
    }
    let device = model.generator().params().device().clone();
    aerials
        .iter()
        .map(|a| {
            let input = data.input_format.apply(a, data.height)?;
            let x = input.to_tensor(model.dtype(), &device)?;
            let out = model.infer(&x, loops)?;
            let mut pano = ImageTensor::unstack(&out.panorama)?;
            let mut seg = ImageTensor::unstack(&out.segmentation)?;
            Ok(Inference {
                panorama: pano.remove(0),
                segmentation: seg.remove(0),
            })
        })
        .collect()
}
