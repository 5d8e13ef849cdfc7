use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::PanoGan;

pub const CHECKPOINT_FORMAT: &str = "panogan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const GENERATOR: &str = "G/";
const IMAGE_D: &str = "D_g/";
const SEG_D: &str = "D_s/";
const OPT_G: &str = "opt_G/";
const OPT_D: &str = "opt_D/";
const METADATA_KEY: &str = "panogan";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: RunConfig,
    state: CheckpointState,
}

/// Position in the run plus optimizer step counts.
///
/// The only randomness after initialization is the per-epoch shuffle, which
/// is a pure function of `(train.seed, epoch)`; `epoch` and `batch_in_epoch`
/// are therefore the complete data-order state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckpointState {
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: u64,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
    pub has_discriminators: bool,
    pub has_optimizer: bool,
}

/// Parameters, optimizer moments, configuration and progress of a run.
///
/// Tensors are namespaced `G/`, `D_g/`, `D_s/`, `opt_G/` and `opt_D/`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: CheckpointState,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Snapshot of a model; optimizer state is added by the trainer.
    pub fn from_model(model: &PanoGan, config: &RunConfig) -> Result<Self> {
        let mut tensors = model.generator().params().prefixed(GENERATOR)?;
        if let Some(d) = model.discriminators() {
            tensors.extend(d.image.params().prefixed(IMAGE_D)?);
            tensors.extend(d.segmentation.params().prefixed(SEG_D)?);
        }
        Ok(Self {
            config: config.clone(),
            state: CheckpointState {
                has_discriminators: model.discriminators().is_some(),
                ..Default::default()
            },
            tensors,
        })
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
            .collect()
    }

    pub(crate) fn generator_optimizer(&self) -> BTreeMap<String, Tensor> {
        self.section(OPT_G)
    }

    pub(crate) fn discriminator_optimizer(&self) -> BTreeMap<String, Tensor> {
        self.section(OPT_D)
    }

    pub(crate) fn set_optimizers(&mut self, g: BTreeMap<String, Tensor>, d: BTreeMap<String, Tensor>) {
        self.tensors.extend(g.into_iter().map(|(k, t)| (format!("{OPT_G}{k}"), t)));
        self.tensors.extend(d.into_iter().map(|(k, t)| (format!("{OPT_D}{k}"), t)));
        self.state.has_optimizer = true;
    }

    /// Copy keeping only the generator parameters.
    pub fn generator_only(&self) -> Self {
        Self {
            config: self.config.clone(),
            state: CheckpointState {
                has_discriminators: false,
                has_optimizer: false,
                ..self.state
            },
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(GENERATOR))
                .map(|(k, t)| (k.clone(), t.clone()))
                .collect(),
        }
    }

    /// Rebuilds the networks stored in this checkpoint.
    pub fn build_model(&self, device: &Device) -> Result<PanoGan> {
        let mut model = PanoGan::new(self.config.model.clone(), self.config.train.seed, device)?;
        model.generator().params().load(&self.section(GENERATOR))?;
        if self.state.has_discriminators {
            let d = model.require_discriminators()?;
            d.image.params().load(&self.section(IMAGE_D))?;
            d.segmentation.params().load(&self.section(SEG_D))?;
        } else {
            model = model.without_discriminators();
        }
        Ok(model)
    }

    /// Writes a safetensors archive; the file appears atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // A single entry keeps the header byte-stable; map order is unspecified.
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state: self.state,
        };
        let metadata = HashMap::from([(METADATA_KEY.to_string(), serde_json::to_string(&header)?)]);
        let bytes = safetensors::serialize(self.tensors.iter(), Some(metadata))
            .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;
        let tmp = path.with_extension("safetensors.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| bad("no metadata".into()))?;
        let text = meta
            .get(METADATA_KEY)
            .ok_or_else(|| bad(format!("missing metadata key {METADATA_KEY:?}")))?;
        let header: Header = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("not a {CHECKPOINT_FORMAT} file")));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let Header { config, state, .. } = header;
        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?
            .into_iter()
            .collect();
        Ok(Self { config, state, tensors })
    }
}

/// File name of the checkpoint written after `step` training steps.
pub(crate) fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.safetensors")
}

/// The checkpoint in `dir` with the highest step, if any.
pub fn latest_checkpoint(dir: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.strip_suffix(".safetensors"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().map_or(true, |(s, _)| step > *s) {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}
