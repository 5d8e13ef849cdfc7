//! Dataset discovery on disk.
//!
//! A dataset root is laid out as
//! `<root>/<split>/{aerial,panorama,segmentation}/<id>.<ext>`; files are
//! matched across the three directories by their stem.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use crate::error::{Error, Result};

pub const AERIAL_DIR: &str = "aerial";
pub const PANORAMA_DIR: &str = "panorama";
pub const SEGMENTATION_DIR: &str = "segmentation";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff", "webp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// Published sizes of the two benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    Cvusa,
    OrlandoPittsburgh,
}

impl DatasetPreset {
    pub fn expected_records(self, split: Split) -> usize {
        match (self, split) {
            (DatasetPreset::Cvusa, Split::Train) => 35_532,
            (DatasetPreset::Cvusa, Split::Test) => 8_884,
            (DatasetPreset::OrlandoPittsburgh, Split::Train) => 1_910,
            (DatasetPreset::OrlandoPittsburgh, Split::Test) => 722,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            DatasetPreset::Cvusa => 30,
            DatasetPreset::OrlandoPittsburgh => 200,
        }
    }
}

/// Relative paths of one aerial/panorama/segmentation triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDescriptor {
    pub id: String,
    pub aerial: PathBuf,
    pub panorama: Option<PathBuf>,
    pub segmentation: Option<PathBuf>,
}

/// A file that has no counterpart in one of the other directories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orphan {
    pub path: PathBuf,
    pub reason: String,
}

/// One loaded record. `panorama`/`segmentation` are absent for inference-only data.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub aerial: ImageTensor,
    pub panorama: Option<ImageTensor>,
    pub segmentation: Option<ImageTensor>,
}

impl SamplePair {
    /// Checks that panorama and segmentation, when both present, share spatial size.
    pub fn validate(&self) -> Result<()> {
        if let (Some(p), Some(s)) = (&self.panorama, &self.segmentation) {
            if (p.height(), p.width()) != (s.height(), s.width()) {
                return Err(Error::shape(format!(
                    "record {}: panorama {}x{} vs segmentation {}x{}",
                    self.id,
                    p.height(),
                    p.width(),
                    s.height(),
                    s.width()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub records: Vec<RecordDescriptor>,
    #[serde(default)]
    pub orphans: Vec<Orphan>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Lists image files in `dir` keyed by file stem.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate id {stem:?}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(root).unwrap_or(path).to_path_buf()
}

/// Scans `<root>/<split>/` and matches files by id.
///
/// In the train split every aerial image needs both a panorama and a
/// segmentation map. In the test split the segmentation is optional and
/// aerial images without a panorama are reported as orphans. Panoramas or
/// segmentations without an aerial image are orphans in either split.
pub fn load_manifest(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let split_dir = root.join(split.as_str());
    if !split_dir.is_dir() {
        return Err(Error::config(format!(
            "dataset split directory {} does not exist",
            split_dir.display()
        )));
    }
    let aerial_dir = split_dir.join(AERIAL_DIR);
    let pano_dir = split_dir.join(PANORAMA_DIR);
    let seg_dir = split_dir.join(SEGMENTATION_DIR);
    if !aerial_dir.is_dir() || !pano_dir.is_dir() {
        return Err(Error::config(format!(
            "{} must contain {AERIAL_DIR}/ and {PANORAMA_DIR}/",
            split_dir.display()
        )));
    }
    if split == Split::Train && !seg_dir.is_dir() {
        return Err(Error::config(format!(
            "train split {} is missing {SEGMENTATION_DIR}/",
            split_dir.display()
        )));
    }

    let aerials = list_images(&aerial_dir)?;
    let panos = list_images(&pano_dir)?;
    let segs = if seg_dir.is_dir() {
        list_images(&seg_dir)?
    } else {
        BTreeMap::new()
    };

    let mut records = Vec::new();
    let mut orphans = Vec::new();
    for (id, aerial) in &aerials {
        let pano = panos.get(id);
        let seg = segs.get(id);
        match split {
            Split::Train => {
                if pano.is_none() || seg.is_none() {
                    let missing = if pano.is_none() { PANORAMA_DIR } else { SEGMENTATION_DIR };
                    return Err(Error::Integrity(format!(
                        "train record {id:?} has no {missing} image"
                    )));
                }
            }
            Split::Test => {
                if pano.is_none() {
                    orphans.push(Orphan {
                        path: relative(root, aerial),
                        reason: format!("no {PANORAMA_DIR} image for id {id:?}"),
                    });
                    continue;
                }
            }
        }
        records.push(RecordDescriptor {
            id: id.clone(),
            aerial: relative(root, aerial),
            panorama: pano.map(|p| relative(root, p)),
            segmentation: seg.map(|p| relative(root, p)),
        });
    }
    let known: BTreeSet<&String> = aerials.keys().collect();
    for (kind, files) in [(PANORAMA_DIR, &panos), (SEGMENTATION_DIR, &segs)] {
        for (id, path) in files {
            if !known.contains(id) {
                orphans.push(Orphan {
                    path: relative(root, path),
                    reason: format!("{kind} image without aerial image for id {id:?}"),
                });
            }
        }
    }
    for orphan in &orphans {
        log::warn!("unmatched file {}: {}", orphan.path.display(), orphan.reason);
    }
    if records.is_empty() {
        return Err(Error::Integrity(format!(
            "no matched records under {}",
            split_dir.display()
        )));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split,
        records,
        orphans,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<SamplePair> {
        let rec = self.records.get(index).ok_or_else(|| {
            Error::config(format!("record index {index} out of range ({})", self.len()))
        })?;
        let load = |p: &Option<PathBuf>| -> Result<Option<ImageTensor>> {
            p.as_ref()
                .map(|p| ImageTensor::load(self.root.join(p)))
                .transpose()
        };
        let pair = SamplePair {
            id: rec.id.clone(),
            aerial: ImageTensor::load(self.root.join(&rec.aerial))?,
            panorama: load(&rec.panorama)?,
            segmentation: load(&rec.segmentation)?,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Logs a warning when the record count differs from a published split size.
    pub fn check_preset(&self, preset: DatasetPreset) -> bool {
        let expected = preset.expected_records(self.split);
        if expected != self.len() {
            log::warn!(
                "{:?} {} split should have {expected} records, found {}",
                preset,
                self.split,
                self.len()
            );
            return false;
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
