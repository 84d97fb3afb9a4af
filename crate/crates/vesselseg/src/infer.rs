//! Inference: probability maps to binary masks, optional test-time
//! augmentation, and whole-volume segmentation with region-of-interest
//! handling.
//!
//! Test-time augmentation runs the network on the original slice plus its
//! horizontal and vertical mirror, flips the mirrored predictions back,
//! binarizes each of the three maps at 0.5 and keeps a pixel foreground when
//! at least two of the three votes agree. The inner boundary is clipped to
//! the outer one after voting so predicted masks always nest.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Boundary;
use crate::net::{Tensor, UNet};
use crate::resample::{hflip, vflip, Image, Mask};
use crate::volume::{interpolate_roi, slice_resample_map, LabelPair, RoiBox, Volume};

/// Probability at or above which a pixel counts as foreground.
pub const BINARY_THRESHOLD: f32 = 0.5;

/// Filename of the segmentation provenance record.
pub const RESULT_FILE: &str = "result.json";

/// Upper bound on slices per network invocation, keeping activation memory
/// flat regardless of volume length.
const MAX_FORWARD_BATCH: usize = 12;

/// Thresholds a probability map; `p >= threshold` is foreground.
pub fn binarize(prob: &Array2<f32>, threshold: f32) -> Mask {
    prob.mapv(|p| u8::from(p >= threshold))
}

/// Pixel-wise majority over exactly three binary masks.
pub fn majority_vote(votes: [&Mask; 3]) -> Mask {
    let mut out = votes[0].clone();
    ndarray::Zip::from(&mut out)
        .and(votes[1])
        .and(votes[2])
        .for_each(|a, &b, &c| {
            *a = u8::from(*a as u16 + b as u16 + c as u16 >= 2);
        });
    out
}

/// Binarizes the direct prediction and the un-flipped mirror predictions,
/// then takes the pixel-wise majority.
fn unflip_and_vote(direct: &Image, h_mirrored: &Image, v_mirrored: &Image) -> Mask {
    let a = binarize(direct, BINARY_THRESHOLD);
    let b = binarize(&hflip(h_mirrored), BINARY_THRESHOLD);
    let c = binarize(&vflip(v_mirrored), BINARY_THRESHOLD);
    majority_vote([&a, &b, &c])
}

/// Zeroes inner-boundary pixels that fall outside the outer boundary.
pub fn clip_to_outer(mab: &Mask, lib: &mut Mask) {
    ndarray::Zip::from(lib).and(mab).for_each(|l, &m| {
        if m == 0 {
            *l = 0;
        }
    });
}

/// A ready-to-run segmentation model: either one two-channel network or a
/// pair of single-channel networks dedicated to one boundary each.
pub enum TrainedModel {
    TwoChannel(UNet<f32>),
    PerBoundary { mab: UNet<f32>, lib: UNet<f32> },
}

impl TrainedModel {
    /// Evaluation-mode probabilities for a batch of single-channel images;
    /// returns per-slice (MAB, LIB) probability maps.
    pub fn predict_batch(&mut self, batch: &Tensor<f32>) -> Result<Vec<(Image, Image)>> {
        let n = batch.dim().0;
        let mut out = Vec::with_capacity(n);
        match self {
            TrainedModel::TwoChannel(net) => {
                let prob = net.predict(batch)?;
                for i in 0..n {
                    out.push((
                        prob.slice(s![i, 0, .., ..]).to_owned(),
                        prob.slice(s![i, 1, .., ..]).to_owned(),
                    ));
                }
            }
            TrainedModel::PerBoundary { mab, lib } => {
                let pm = mab.predict(batch)?;
                let pl = lib.predict(batch)?;
                for i in 0..n {
                    out.push((
                        pm.slice(s![i, 0, .., ..]).to_owned(),
                        pl.slice(s![i, 0, .., ..]).to_owned(),
                    ));
                }
            }
        }
        Ok(out)
    }

    /// Fingerprint of the underlying network configuration(s).
    pub fn config_hash(&self) -> String {
        match self {
            TrainedModel::TwoChannel(net) => net.config_hash(),
            TrainedModel::PerBoundary { mab, lib } => {
                let joined = format!("{}+{}", mab.config_hash(), lib.config_hash());
                crate::net::fingerprint(joined.as_bytes())
            }
        }
    }

    /// Saves the model as one checkpoint directory (two-channel) or a
    /// directory with `mab/` and `lib/` sub-checkpoints.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        match self {
            TrainedModel::TwoChannel(net) => {
                net.save_checkpoint(dir, 0, &[], &[])?;
            }
            TrainedModel::PerBoundary { mab, lib } => {
                mab.save_checkpoint(&dir.join("mab"), 0, &[], &[])?;
                lib.save_checkpoint(&dir.join("lib"), 0, &[], &[])?;
            }
        }
        Ok(())
    }

    /// Loads either layout produced by [`TrainedModel::save`] or by the
    /// trainer's checkpointing.
    pub fn load(dir: &Path) -> Result<Self> {
        if dir.join(crate::net::MANIFEST_FILE).is_file() {
            let (net, _) = UNet::<f32>::load_checkpoint(dir)?;
            if net.config().out_channels != 2 {
                return Err(Error::Config(format!(
                    "checkpoint at {} has {} output channels, expected 2",
                    dir.display(),
                    net.config().out_channels
                )));
            }
            return Ok(TrainedModel::TwoChannel(net));
        }
        let mab_dir = dir.join("mab");
        let lib_dir = dir.join("lib");
        if mab_dir.join(crate::net::MANIFEST_FILE).is_file() {
            let (mab, _) = UNet::<f32>::load_checkpoint(&mab_dir)?;
            let (lib, _) = UNet::<f32>::load_checkpoint(&lib_dir)?;
            for net in [&mab, &lib] {
                if net.config().out_channels != 1 {
                    return Err(Error::Config(
                        "per-boundary checkpoints must have 1 output channel".into(),
                    ));
                }
            }
            return Ok(TrainedModel::PerBoundary { mab, lib });
        }
        Err(Error::Config(format!(
            "no checkpoint manifest under {}",
            dir.display()
        )))
    }
}

/// Predicts nested (MAB, LIB) masks for a batch of same-sized images.
pub fn predict_masks(
    model: &mut TrainedModel,
    images: &[Image],
    tta: bool,
) -> Result<Vec<(Mask, Mask)>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = images[0].dim();
    if images.iter().any(|im| im.dim() != (h, w)) {
        return Err(Error::Shape("batch images differ in shape".into()));
    }
    let views_per_image = if tta { 3 } else { 1 };
    let mut batch = Array4::<f32>::zeros((images.len() * views_per_image, 1, h, w));
    for (i, image) in images.iter().enumerate() {
        batch.slice_mut(s![i * views_per_image, 0, .., ..]).assign(image);
        if tta {
            batch
                .slice_mut(s![i * views_per_image + 1, 0, .., ..])
                .assign(&hflip(image));
            batch
                .slice_mut(s![i * views_per_image + 2, 0, .., ..])
                .assign(&vflip(image));
        }
    }
    let probs = model.predict_batch(&batch)?;
    let mut out = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let (mab, mut lib) = if tta {
            let base = i * 3;
            let mab = unflip_and_vote(&probs[base].0, &probs[base + 1].0, &probs[base + 2].0);
            let lib = unflip_and_vote(&probs[base].1, &probs[base + 1].1, &probs[base + 2].1);
            (mab, lib)
        } else {
            (
                binarize(&probs[i].0, BINARY_THRESHOLD),
                binarize(&probs[i].1, BINARY_THRESHOLD),
            )
        };
        clip_to_outer(&mab, &mut lib);
        out.push((mab, lib));
    }
    Ok(out)
}

/// How a volume's slices are presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    /// Resample the whole frame to the network input size.
    FullFrame,
    /// Crop per-slice boxes interpolated between the endpoint annotations,
    /// then resample the crops.
    Roi,
}

/// Inference options for [`segment_volume`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub tta: bool,
    /// Network input size (rows, cols).
    pub input_size: (usize, usize),
    /// Identifier of the checkpoint used, recorded in the provenance file.
    pub checkpoint_id: String,
}

/// Provenance sidecar written next to predicted masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub checkpoint_id: String,
    pub config_hash: String,
    pub tta: bool,
    pub roi_mode: RoiMode,
    pub input_size: (usize, usize),
    pub n_slices: usize,
}

/// Output of [`segment_volume`]: one nested mask pair per slice in the
/// original frame, plus the provenance record.
pub struct SegmentationResult {
    pub labels: Vec<LabelPair>,
    pub record: SegmentationRecord,
}

/// Per-slice regions: interpolated boxes when both endpoint annotations are
/// present, otherwise full-frame for every slice.
pub fn slice_rois(volume: &Volume) -> Result<(RoiMode, Vec<Option<RoiBox>>)> {
    match (&volume.roi_first, &volume.roi_last) {
        (Some(first), Some(last)) => {
            let boxes = interpolate_roi(first, last, volume.slice_shape())?;
            if boxes.len() != volume.n_slices() {
                return Err(Error::Format(format!(
                    "ROI annotations span {} slices but the volume has {}",
                    boxes.len(),
                    volume.n_slices()
                )));
            }
            Ok((RoiMode::Roi, boxes.into_iter().map(Some).collect()))
        }
        (None, None) => Ok((RoiMode::FullFrame, vec![None; volume.n_slices()])),
        _ => Err(Error::Format(
            "volume has only one of the two ROI endpoint annotations".into(),
        )),
    }
}

/// Segments every slice of a volume: crop/resize to the network input,
/// predict (optionally with test-time augmentation), restore the masks into
/// the original frame and enforce boundary nesting.
pub fn segment_volume(
    model: &mut TrainedModel,
    volume: &Volume,
    options: &SegmentOptions,
) -> Result<SegmentationResult> {
    let (roi_mode, rois) = slice_rois(volume)?;
    let shape = volume.slice_shape();
    let mut maps = Vec::with_capacity(volume.n_slices());
    let mut inputs = Vec::with_capacity(volume.n_slices());
    for (index, roi) in rois.iter().enumerate() {
        let map = slice_resample_map(shape, roi.as_ref(), options.input_size)?;
        inputs.push(map.apply_image(&volume.slice_image(index))?);
        maps.push(map);
    }

    let group = if options.tta {
        (MAX_FORWARD_BATCH / 3).max(1)
    } else {
        MAX_FORWARD_BATCH
    };
    let mut labels = Vec::with_capacity(volume.n_slices());
    let mut index = 0usize;
    for chunk in inputs.chunks(group) {
        let masks = predict_masks(model, chunk, options.tta)?;
        for (mab, lib) in masks {
            let map = &maps[index];
            let full_mab = map.restore_mask(&mab)?;
            let full_lib = map.restore_mask(&lib)?;
            labels.push(LabelPair::new(full_mab, full_lib, index)?);
            index += 1;
        }
    }

    Ok(SegmentationResult {
        labels,
        record: SegmentationRecord {
            checkpoint_id: options.checkpoint_id.clone(),
            config_hash: model.config_hash(),
            tta: options.tta,
            roi_mode,
            input_size: options.input_size,
            n_slices: volume.n_slices(),
        },
    })
}

/// Writes predicted masks (`labels/` PNG convention) and `result.json`.
pub fn save_segmentation(dir: &Path, result: &SegmentationResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::volume::save_labels(dir, &result.labels)?;
    let path = dir.join(RESULT_FILE);
    let json = serde_json::to_string_pretty(&result.record)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads a provenance record back.
pub fn load_segmentation_record(dir: &Path) -> Result<SegmentationRecord> {
    let path = dir.join(RESULT_FILE);
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&json)?)
}

/// A boundary-specific view of predictions, used by evaluation code.
pub fn boundary_mask(pair: &LabelPair, boundary: Boundary) -> &Mask {
    match boundary {
        Boundary::Mab => &pair.mab_mask,
        Boundary::Lib => &pair.lib_mask,
    }
}
