//! Procedural ultrasound-like vessel phantoms with analytic ground truth.
//!
//! Each phantom is a single tube: a dark lumen inside a bright wall band
//! inside mid-gray tissue, with the tube center, radius, wall thickness, and
//! ellipticity all drifting smoothly from slice to slice. Corruption is
//! multiplicative Rayleigh speckle plus optional vertical shadow bands.
//! Ground-truth masks are the exact rasterized ellipses, so every generated
//! volume carries perfect labels.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::Mask;
use crate::volume::{
    expand_roi, labels_dir, save_labels, save_volume, LabelPair, RoiBox, Volume,
};

/// Rendered intensity of the lumen interior.
pub const LUMEN_LEVEL: f32 = 0.12;
/// Rendered intensity of the vessel wall band.
pub const WALL_LEVEL: f32 = 0.8;
/// Rendered intensity of surrounding tissue.
pub const TISSUE_LEVEL: f32 = 0.45;
/// Margin in pixels around the ground-truth bounding box when phantoms write
/// endpoint region-of-interest boxes.
const ROI_MARGIN_PX: i64 = 5;
/// Intensity multiplier inside a shadow band.
const SHADOW_ATTENUATION: f32 = 0.35;

/// Parameters of one phantom volume. All lengths are pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_slices: usize,
    /// (rows, cols) of every slice.
    pub image_size: (usize, usize),
    /// Maximum excursion of the tube center from the image center.
    pub centerline_drift_amplitude: f64,
    /// Outer (media-adventitia) equivalent radius range; the rendered ellipse
    /// keeps area pi * r^2.
    pub mab_radius_range: (f64, f64),
    /// Wall thickness range; the inner boundary is the outer ellipse shrunk
    /// by the thickness on both semi-axes.
    pub wall_thickness_range: (f64, f64),
    /// Row/col semi-axis ratio range; 1.0 is a circle.
    pub ellipticity_range: (f64, f64),
    /// Speckle mix-in weight in [0, 1]; 0 disables speckle.
    pub speckle_strength: f64,
    /// Per-slice probability of one vertical shadow band.
    pub shadow_probability: f64,
    /// When set, the sidecar carries endpoint boxes (ground-truth bounding
    /// box of the first/last slice grown by 5 px) for the cropped pathway.
    pub roi_boxes: bool,
    pub in_plane_spacing_mm: (f64, f64),
    pub slice_spacing_mm: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_slices: 12,
            image_size: (128, 160),
            centerline_drift_amplitude: 6.0,
            mab_radius_range: (14.0, 22.0),
            wall_thickness_range: (4.0, 7.0),
            ellipticity_range: (0.9, 1.1),
            speckle_strength: 0.3,
            shadow_probability: 0.15,
            roi_boxes: false,
            in_plane_spacing_mm: (0.1, 0.1),
            slice_spacing_mm: 1.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.image_size;
        if self.n_slices == 0 || rows < 16 || cols < 16 {
            return Err(Error::Config(
                "phantom needs at least 1 slice of at least 16x16 pixels".into(),
            ));
        }
        let (r_lo, r_hi) = self.mab_radius_range;
        let (t_lo, t_hi) = self.wall_thickness_range;
        let (e_lo, e_hi) = self.ellipticity_range;
        if !(0.0 < r_lo && r_lo <= r_hi) || !(0.0 < e_lo && e_lo <= e_hi) || t_lo > t_hi {
            return Err(Error::Config("phantom ranges must be ordered".into()));
        }
        if t_lo < 1.0 {
            return Err(Error::Config("wall thickness must be >= 1 pixel".into()));
        }
        // Worst-case inner semi-axis must stay >= 2 px so the lumen never
        // collapses.
        let min_axis_factor = e_lo.min(1.0 / e_hi);
        if r_lo * min_axis_factor - t_hi < 2.0 {
            return Err(Error::Config(format!(
                "inner boundary can collapse: min outer semi-axis {:.2} minus max thickness {:.2} < 2",
                r_lo * min_axis_factor,
                t_hi
            )));
        }
        let reach = self.centerline_drift_amplitude + r_hi * e_hi.max(1.0 / e_lo) + 2.0;
        if reach * 2.0 >= rows.min(cols) as f64 {
            return Err(Error::Config(format!(
                "vessel (reach {reach:.1} px) does not fit in {rows}x{cols} image"
            )));
        }
        if !(0.0..=1.0).contains(&self.speckle_strength) {
            return Err(Error::Config("speckle_strength must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.shadow_probability) {
            return Err(Error::Config("shadow_probability must lie in [0, 1]".into()));
        }
        if self.in_plane_spacing_mm.0 <= 0.0
            || self.in_plane_spacing_mm.1 <= 0.0
            || self.slice_spacing_mm <= 0.0
        {
            return Err(Error::Config("voxel spacings must be positive".into()));
        }
        Ok(())
    }
}

/// Smooth per-slice profile: a Gaussian random walk, box-smoothed with a
/// quarter-length window and rescaled so the largest excursion is exactly
/// `amplitude` (all zeros when the walk degenerates or `amplitude` is 0).
fn smooth_walk(rng: &mut ChaCha8Rng, n: usize, amplitude: f64) -> Vec<f64> {
    let mut walk = vec![0.0; n];
    let mut acc = 0.0;
    for w in walk.iter_mut() {
        acc += <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        *w = acc;
    }
    if n < 2 || amplitude == 0.0 {
        return vec![0.0; n];
    }
    let half = (n / 8).max(1);
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            walk[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let mean = smoothed.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = smoothed.iter().map(|v| v - mean).collect();
    let peak = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return vec![0.0; n];
    }
    centered.iter().map(|v| v * amplitude / peak).collect()
}

/// Smooth profile confined to [lo, hi], centered on the range midpoint.
fn ranged_walk(rng: &mut ChaCha8Rng, n: usize, range: (f64, f64)) -> Vec<f64> {
    let mid = (range.0 + range.1) / 2.0;
    let half_span = (range.1 - range.0) / 2.0;
    smooth_walk(rng, n, half_span)
        .into_iter()
        .map(|v| mid + v)
        .collect()
}

/// Unit-mean Rayleigh multiplier sampled by inverse CDF.
fn rayleigh_unit_mean(rng: &mut ChaCha8Rng) -> f64 {
    let sigma = (2.0 / std::f64::consts::PI).sqrt();
    let u: f64 = rng.random();
    sigma * (-2.0 * (1.0 - u).ln()).sqrt()
}

fn ellipse_mask(
    shape: (usize, usize),
    center: (f64, f64),
    semi_axes: (f64, f64),
) -> Mask {
    Mask::from_shape_fn(shape, |(r, c)| {
        let dy = (r as f64 - center.0) / semi_axes.0;
        let dx = (c as f64 - center.1) / semi_axes.1;
        u8::from(dy * dy + dx * dx <= 1.0)
    })
}

fn bounding_box(mask: &Mask, slice: usize) -> Option<RoiBox> {
    let mut r0 = usize::MAX;
    let mut c0 = usize::MAX;
    let mut r1 = 0usize;
    let mut c1 = 0usize;
    for ((r, c), &v) in mask.indexed_iter() {
        if v != 0 {
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
    }
    if r0 == usize::MAX {
        return None;
    }
    Some(RoiBox {
        slice,
        top_left: [r0 as i64, c0 as i64],
        bottom_right: [r1 as i64 + 1, c1 as i64 + 1],
    })
}

/// Renders one phantom volume with its exact label masks. Deterministic
/// under `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, Vec<LabelPair>)> {
    spec.validate()?;
    let (rows, cols) = spec.image_size;
    let n = spec.n_slices;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let drift_r = smooth_walk(&mut rng, n, spec.centerline_drift_amplitude);
    let drift_c = smooth_walk(&mut rng, n, spec.centerline_drift_amplitude);
    let radius = ranged_walk(&mut rng, n, spec.mab_radius_range);
    let thickness = ranged_walk(&mut rng, n, spec.wall_thickness_range);
    let ellipticity = ranged_walk(&mut rng, n, spec.ellipticity_range);

    let base_center = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let mut voxels = Array3::<f32>::zeros((n, rows, cols));
    let mut labels = Vec::with_capacity(n);

    for k in 0..n {
        let center = (base_center.0 + drift_r[k], base_center.1 + drift_c[k]);
        let outer = (radius[k] * ellipticity[k], radius[k] / ellipticity[k]);
        let inner = (outer.0 - thickness[k], outer.1 - thickness[k]);
        debug_assert!(inner.0 >= 2.0 && inner.1 >= 2.0);

        let mab = ellipse_mask((rows, cols), center, outer);
        let lib = ellipse_mask((rows, cols), center, inner);

        let mut slice = voxels.index_axis_mut(ndarray::Axis(0), k);
        for ((r, c), v) in slice.indexed_iter_mut() {
            *v = if lib[[r, c]] != 0 {
                LUMEN_LEVEL
            } else if mab[[r, c]] != 0 {
                WALL_LEVEL
            } else {
                TISSUE_LEVEL
            };
        }

        let s = spec.speckle_strength as f32;
        if s > 0.0 {
            for v in slice.iter_mut() {
                let factor = (1.0 - s) + s * rayleigh_unit_mean(&mut rng) as f32;
                *v = (*v * factor).clamp(0.0, 1.0);
            }
        }

        if spec.shadow_probability > 0.0 && rng.random_bool(spec.shadow_probability) {
            let width = rng.random_range(cols / 10..=cols / 4).max(1);
            let start = rng.random_range(0..cols.saturating_sub(width).max(1));
            for r in 0..rows {
                for c in start..(start + width).min(cols) {
                    slice[[r, c]] *= SHADOW_ATTENUATION;
                }
            }
        }

        labels.push(LabelPair::new(mab, lib, k)?);
    }

    let mut volume = Volume::new(voxels, spec.in_plane_spacing_mm, spec.slice_spacing_mm)?;
    if spec.roi_boxes {
        volume.roi_first = bounding_box(&labels[0].mab_mask, 0)
            .map(|b| expand_roi(&b, ROI_MARGIN_PX, spec.image_size));
        volume.roi_last = bounding_box(&labels[n - 1].mab_mask, n - 1)
            .map(|b| expand_roi(&b, ROI_MARGIN_PX, spec.image_size));
    }
    Ok((volume, labels))
}

/// Generates `n_volumes` phantoms under `dest`, two volumes per synthetic
/// subject (mimicking a left/right artery pair). Volume directories are
/// `volume_000`, `volume_001`, ...; per-volume seeds derive from `seed`.
/// Returns the created directories.
pub fn generate_cohort(
    dest: &Path,
    n_volumes: usize,
    spec_template: &PhantomSpec,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    if n_volumes == 0 {
        return Err(Error::InvalidArgument("cohort needs at least 1 volume".into()));
    }
    spec_template.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(n_volumes);
    for i in 0..n_volumes {
        let mut spec = *spec_template;
        spec.seed = master.random();
        let (mut volume, labels) = generate_phantom(&spec)?;
        volume.subject_id = Some(format!("subject_{:03}", i / 2));
        let dir = dest.join(format!("volume_{i:03}"));
        save_volume(&dir, &volume)?;
        save_labels(&labels_dir(&dir), &labels)?;
        dirs.push(dir);
    }
    Ok(dirs)
}
