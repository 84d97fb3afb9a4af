//! Training-set expansion: reslicing labeled volumes to a finer slice spacing
//! by interpolating signed distance maps, and randomized geometric
//! augmentation applied identically to an image and its masks.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{hflip, rotate_image, rotate_mask, translate_zero_fill, vflip, Image};
use crate::sdf::{signed_distance, threshold_sdf};
use crate::volume::{LabelPair, RoiBox, Volume};

/// Randomized geometric augmentation parameters. Translation is one-sided:
/// row/col shifts are drawn from [0, max_translate_frac * dim] and applied
/// down/right with zero fill, so the flips are what restore directional
/// symmetry in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub max_translate_frac: f64,
    pub max_rotate_deg: f64,
    /// Base seed from which training draws its augmentation streams.
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_hflip: 0.5,
            p_vflip: 0.5,
            max_translate_frac: 0.2,
            max_rotate_deg: 20.0,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// A policy that never alters its input.
    pub fn disabled() -> Self {
        AugmentPolicy {
            p_hflip: 0.0,
            p_vflip: 0.0,
            max_translate_frac: 0.0,
            max_rotate_deg: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_hflip) || !(0.0..=1.0).contains(&self.p_vflip) {
            return Err(Error::Config(
                "flip probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.max_translate_frac) {
            return Err(Error::Config(
                "max_translate_frac must lie in [0, 1]".into(),
            ));
        }
        if self.max_rotate_deg < 0.0 {
            return Err(Error::Config("max_rotate_deg must be >= 0".into()));
        }
        Ok(())
    }
}

/// Applies one random draw of the policy to an image and its mask pair:
/// horizontal flip, vertical flip, integer translation (zero fill), then
/// rotation about the image center (bilinear for the image, nearest for
/// masks). The same transform hits all three planes, so mask nesting is
/// preserved.
pub fn augment_sample(
    image: &Image,
    labels: &LabelPair,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> (Image, LabelPair) {
    let (h, w) = image.dim();
    debug_assert_eq!(labels.mab_mask.dim(), (h, w));

    let do_h = policy.p_hflip > 0.0 && rng.random_bool(policy.p_hflip);
    let do_v = policy.p_vflip > 0.0 && rng.random_bool(policy.p_vflip);
    let max_dy = policy.max_translate_frac * h as f64;
    let max_dx = policy.max_translate_frac * w as f64;
    let dy = if max_dy > 0.0 {
        rng.random_range(0.0..=max_dy).round() as usize
    } else {
        0
    };
    let dx = if max_dx > 0.0 {
        rng.random_range(0.0..=max_dx).round() as usize
    } else {
        0
    };
    let angle = if policy.max_rotate_deg > 0.0 {
        rng.random_range(-policy.max_rotate_deg..=policy.max_rotate_deg)
    } else {
        0.0
    };

    let mut img = image.clone();
    let mut mab = labels.mab_mask.clone();
    let mut lib = labels.lib_mask.clone();
    if do_h {
        img = hflip(&img);
        mab = hflip(&mab);
        lib = hflip(&lib);
    }
    if do_v {
        img = vflip(&img);
        mab = vflip(&mab);
        lib = vflip(&lib);
    }
    if dy > 0 || dx > 0 {
        img = translate_zero_fill(&img, dy, dx);
        mab = translate_zero_fill(&mab, dy, dx);
        lib = translate_zero_fill(&lib, dy, dx);
    }
    if angle != 0.0 {
        img = rotate_image(&img, angle);
        mab = rotate_mask(&mab, angle);
        lib = rotate_mask(&lib, angle);
    }

    let pair = LabelPair {
        mab_mask: mab,
        lib_mask: lib,
        slice_index: labels.slice_index,
    };
    (img, pair)
}

/// Reslices a labeled volume to (approximately) `target_spacing` mm between
/// slices.
///
/// Each gap between consecutive slices is subdivided into
/// `k = round(src_spacing / target_spacing)` steps. Intermediate masks come
/// from linearly interpolated signed distance maps thresholded at zero;
/// intermediate images are linear blends. Original slices are copied through
/// bit-exactly at their original positions. Because signed distance is
/// monotone under set inclusion, interpolated LIB masks stay nested inside
/// interpolated MAB masks. Region-of-interest endpoint boxes carry over with
/// their slice indices remapped to the new grid (slice `i` lands at `i * k`).
pub fn shape_interp_reslice(
    volume: &Volume,
    labels: &[LabelPair],
    target_spacing: f64,
) -> Result<(Volume, Vec<LabelPair>)> {
    let n = volume.n_slices();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "reslicing needs at least 2 slices".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "volume has {} slices but {} label pairs; every slice must be labeled",
            n,
            labels.len()
        )));
    }
    for (i, pair) in labels.iter().enumerate() {
        if pair.slice_index != i {
            return Err(Error::InvalidArgument(format!(
                "label pairs must cover slices in order; position {} holds slice {}",
                i, pair.slice_index
            )));
        }
        if pair.mab_mask.dim() != volume.slice_shape() {
            return Err(Error::Shape(format!(
                "label slice {} shape {:?} differs from volume slice shape {:?}",
                i,
                pair.mab_mask.dim(),
                volume.slice_shape()
            )));
        }
    }
    if target_spacing <= 0.0 || target_spacing > volume.slice_spacing {
        return Err(Error::InvalidArgument(format!(
            "target spacing {} must lie in (0, {}]",
            target_spacing, volume.slice_spacing
        )));
    }

    let k = (volume.slice_spacing / target_spacing).round().max(1.0) as usize;
    let (h, w) = volume.slice_shape();
    let m = (n - 1) * k + 1;

    let sdf_mab: Vec<_> = labels.iter().map(|p| signed_distance(&p.mab_mask)).collect();
    let sdf_lib: Vec<_> = labels.iter().map(|p| signed_distance(&p.lib_mask)).collect();

    let mut voxels = Array3::<f32>::zeros((m, h, w));
    let mut out_labels = Vec::with_capacity(m);
    for out_idx in 0..m {
        let gap = (out_idx / k).min(n - 2);
        let j = out_idx - gap * k;
        if j == 0 || out_idx == m - 1 {
            let src = if j == 0 { gap } else { n - 1 };
            voxels
                .index_axis_mut(ndarray::Axis(0), out_idx)
                .assign(&volume.slice_view(src));
            out_labels.push(LabelPair {
                mab_mask: labels[src].mab_mask.clone(),
                lib_mask: labels[src].lib_mask.clone(),
                slice_index: out_idx,
            });
            continue;
        }
        let t = j as f64 / k as f64;
        let t32 = t as f32;
        let blend =
            &volume.slice_view(gap) * (1.0 - t32) + &volume.slice_view(gap + 1) * t32;
        voxels
            .index_axis_mut(ndarray::Axis(0), out_idx)
            .assign(&blend);
        let mab = threshold_sdf(&(&sdf_mab[gap] * (1.0 - t) + &sdf_mab[gap + 1] * t));
        let lib = threshold_sdf(&(&sdf_lib[gap] * (1.0 - t) + &sdf_lib[gap + 1] * t));
        out_labels.push(LabelPair {
            mab_mask: mab,
            lib_mask: lib,
            slice_index: out_idx,
        });
    }

    let mut out = Volume::new(
        voxels,
        volume.in_plane_spacing,
        volume.slice_spacing / k as f64,
    )?;
    out.slice_axis_label = volume.slice_axis_label.clone();
    out.subject_id = volume.subject_id.clone();
    out.roi_first = volume.roi_first.map(|b| RoiBox {
        slice: b.slice * k,
        ..b
    });
    out.roi_last = volume.roi_last.map(|b| RoiBox {
        slice: b.slice * k,
        ..b
    });
    Ok((out, out_labels))
}
