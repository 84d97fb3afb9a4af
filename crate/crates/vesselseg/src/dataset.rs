//! Dataset plumbing: discovering labeled volume directories, partitioning
//! them by subject, and flattening volumes into fixed-size, network-ready
//! samples (with optional reslice expansion and region-of-interest crops).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::augment::shape_interp_reslice;
use crate::error::{Error, Result};
use crate::infer::slice_rois;
use crate::metrics::Boundary;
use crate::net::Tensor;
use crate::resample::{Image, Mask};
use crate::volume::{
    labels_dir, load_labels, load_volume, slice_resample_map, DatasetSplit, LabelPair, Volume,
};

/// Which carotid segment a dataset covers. Common carotid volumes are
/// processed full-frame; internal carotid volumes carry endpoint
/// region-of-interest boxes and are segmented inside the interpolated crops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artery {
    Cca,
    Ica,
}

impl Artery {
    pub const ALL: [Artery; 2] = [Artery::Cca, Artery::Ica];

    /// Directory-friendly lowercase name.
    pub fn dir_name(&self) -> &'static str {
        match self {
            Artery::Cca => "cca",
            Artery::Ica => "ica",
        }
    }
}

impl fmt::Display for Artery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl std::str::FromStr for Artery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cca" => Ok(Artery::Cca),
            "ica" => Ok(Artery::Ica),
            other => Err(Error::Config(format!(
                "unknown artery '{other}', expected 'cca' or 'ica'"
            ))),
        }
    }
}

/// One discovered volume directory and the subject it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortEntry {
    pub dir: PathBuf,
    /// Directory name, used as the volume's identifier in result tables.
    pub name: String,
    pub subject_id: String,
}

#[derive(Deserialize)]
struct SubjectProbe {
    #[serde(default)]
    subject_id: Option<String>,
}

/// Scans `root` for volume directories — direct subdirectories holding a
/// `volume.json` sidecar — sorted by directory name. Every sidecar must name
/// its subject so the cohort can be partitioned without a subject leaking
/// across splits.
pub fn discover_cohort(root: &Path) -> Result<Vec<CohortEntry>> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        let sidecar = dir.join("volume.json");
        if !dir.is_dir() || !sidecar.is_file() {
            continue;
        }
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let probe: SubjectProbe = serde_json::from_str(&text)?;
        let subject_id = probe.subject_id.ok_or_else(|| {
            Error::Format(format!(
                "{}: sidecar lacks a subject_id, cannot split by subject",
                sidecar.display()
            ))
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        entries.push(CohortEntry {
            dir,
            name,
            subject_id,
        });
    }
    if entries.is_empty() {
        return Err(Error::Format(format!(
            "no volume directories under {}",
            root.display()
        )));
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(entries)
}

/// Sorted, deduplicated subject ids of a cohort.
pub fn subject_ids(entries: &[CohortEntry]) -> Vec<String> {
    let mut ids: Vec<String> = entries.iter().map(|e| e.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Entries whose subject appears in `ids`, preserving cohort order.
pub fn entries_for<'a>(entries: &'a [CohortEntry], ids: &[String]) -> Vec<&'a CohortEntry> {
    entries
        .iter()
        .filter(|e| ids.iter().any(|id| *id == e.subject_id))
        .collect()
}

/// Partitions a cohort by a subject-level split into (train, val, test).
pub fn partition_cohort<'a>(
    entries: &'a [CohortEntry],
    split: &DatasetSplit,
) -> (
    Vec<&'a CohortEntry>,
    Vec<&'a CohortEntry>,
    Vec<&'a CohortEntry>,
) {
    (
        entries_for(entries, &split.train_ids),
        entries_for(entries, &split.val_ids),
        entries_for(entries, &split.test_ids),
    )
}

/// A volume and its per-slice label masks held in memory.
#[derive(Debug, Clone)]
pub struct LoadedVolume {
    /// Directory name, used as the volume's identifier in result tables.
    pub name: String,
    pub volume: Volume,
    pub labels: Vec<LabelPair>,
}

/// Loads a volume directory together with its `labels/` masks.
pub fn load_labeled(dir: &Path) -> Result<LoadedVolume> {
    let volume = load_volume(dir)?;
    let labels = load_labels(&labels_dir(dir), volume.n_slices())?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(LoadedVolume {
        name,
        volume,
        labels,
    })
}

/// One network-ready example: an image and its nested masks, all at the
/// network input size.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub mab: Mask,
    pub lib: Mask,
}

/// Flat, order-stable pool of fixed-size samples.
#[derive(Debug, Clone, Default)]
pub struct SlicePool {
    pub samples: Vec<Sample>,
}

impl SlicePool {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How labeled volumes become samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// Network input size (rows, cols).
    pub input_size: (usize, usize),
    /// When set, volumes are first resliced to roughly this spacing in mm by
    /// shape-based interpolation, multiplying the sample count by about the
    /// spacing ratio. Spacings at or above a volume's own spacing (and
    /// single-slice volumes) pass through unchanged.
    pub reslice_spacing_mm: Option<f64>,
}

/// Flattens labeled volumes into a sample pool, volume by volume in input
/// order. Volumes with endpoint ROI annotations contribute per-slice crops
/// from the interpolated boxes; plain volumes contribute full frames.
pub fn build_pool(volumes: &[LoadedVolume], options: &PoolOptions) -> Result<SlicePool> {
    let mut samples = Vec::new();
    for lv in volumes {
        match options.reslice_spacing_mm {
            Some(spacing) if lv.volume.n_slices() >= 2 => {
                let target = spacing.min(lv.volume.slice_spacing);
                let (volume, labels) = shape_interp_reslice(&lv.volume, &lv.labels, target)?;
                append_samples(&mut samples, &volume, &labels, options.input_size)?;
            }
            _ => append_samples(&mut samples, &lv.volume, &lv.labels, options.input_size)?,
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled slices to pool; dataset is empty".into(),
        ));
    }
    Ok(SlicePool { samples })
}

fn append_samples(
    samples: &mut Vec<Sample>,
    volume: &Volume,
    labels: &[LabelPair],
    input_size: (usize, usize),
) -> Result<()> {
    if labels.len() != volume.n_slices() {
        return Err(Error::Shape(format!(
            "volume has {} slices but {} label pairs",
            volume.n_slices(),
            labels.len()
        )));
    }
    let (_, rois) = slice_rois(volume)?;
    for (pair, roi) in labels.iter().zip(&rois) {
        let map = slice_resample_map(volume.slice_shape(), roi.as_ref(), input_size)?;
        samples.push(Sample {
            image: map.apply_image(&volume.slice_image(pair.slice_index))?,
            mab: map.apply_mask(&pair.mab_mask)?,
            lib: map.apply_mask(&pair.lib_mask)?,
        });
    }
    Ok(())
}

fn check_batch(samples: &[&Sample]) -> Result<(usize, usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Shape("empty sample batch".into()))?;
    let (h, w) = first.image.dim();
    for s in samples {
        if s.image.dim() != (h, w) || s.mab.dim() != (h, w) || s.lib.dim() != (h, w) {
            return Err(Error::Shape(
                "samples in a batch must share one shape".into(),
            ));
        }
    }
    Ok((samples.len(), h, w))
}

/// Stacks sample images into a `[n, 1, h, w]` network input tensor.
pub fn batch_inputs(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let (n, h, w) = check_batch(samples)?;
    let mut x = Tensor::zeros((n, 1, h, w));
    for (i, sample) in samples.iter().enumerate() {
        x.slice_mut(s![i, 0, .., ..]).assign(&sample.image);
    }
    Ok(x)
}

/// Stacks mask pairs into a `[n, 2, h, w]` target tensor
/// (channel 0 = MAB, channel 1 = LIB).
pub fn batch_targets(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let (n, h, w) = check_batch(samples)?;
    let mut t = Tensor::zeros((n, 2, h, w));
    for (i, sample) in samples.iter().enumerate() {
        t.slice_mut(s![i, 0, .., ..])
            .assign(&sample.mab.mapv(f32::from));
        t.slice_mut(s![i, 1, .., ..])
            .assign(&sample.lib.mapv(f32::from));
    }
    Ok(t)
}

/// Stacks one boundary's masks into a `[n, 1, h, w]` target tensor for
/// single-boundary training.
pub fn batch_targets_single(samples: &[&Sample], boundary: Boundary) -> Result<Tensor<f32>> {
    let (n, h, w) = check_batch(samples)?;
    let mut t = Tensor::zeros((n, 1, h, w));
    for (i, sample) in samples.iter().enumerate() {
        let mask = match boundary {
            Boundary::Mab => &sample.mab,
            Boundary::Lib => &sample.lib,
        };
        t.slice_mut(s![i, 0, .., ..]).assign(&mask.mapv(f32::from));
    }
    Ok(t)
}
