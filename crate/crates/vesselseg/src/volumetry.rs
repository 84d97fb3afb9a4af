//! Wall volumetry: vessel wall volume (VWV) from stacked mask pairs and
//! per-slice point-wise wall thickness (VWT) profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{symmetric_correspondence, Contour};
use crate::volume::LabelPair;

/// Per-volume wall measurements. `vwv` always equals the sum of the slice
/// wall areas times the slice spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    /// Vessel wall volume in mm^3.
    pub vwv: f64,
    /// Wall cross-section area per slice in mm^2.
    pub per_slice_wall_area: Vec<f64>,
    /// Point-wise wall thickness values per slice in mm (empty for slices
    /// where no thickness profile was computed).
    pub vwt_profiles: Vec<Vec<f64>>,
    /// Mean of all thickness samples pooled over slices, if any.
    pub vwt_mean: Option<f64>,
    /// Maximum thickness sample over all slices, if any.
    pub vwt_max: Option<f64>,
}

impl VolumeReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn count_fg(mask: &ndarray::Array2<u8>) -> usize {
    mask.iter().filter(|v| **v != 0).count()
}

/// Vessel wall volume: sum over slices of (|MAB| - |LIB|) * pixel area *
/// slice spacing. `pixel_spacing` is mm/px as (x, y); `slice_spacing` is mm.
/// Fails if any slice violates the LIB-inside-MAB nesting.
pub fn vwv(labels: &[LabelPair], pixel_spacing: (f64, f64), slice_spacing: f64) -> Result<f64> {
    let areas = per_slice_wall_areas(labels, pixel_spacing)?;
    Ok(areas.iter().sum::<f64>() * slice_spacing)
}

/// Wall cross-section area of every slice in mm^2.
pub fn per_slice_wall_areas(
    labels: &[LabelPair],
    pixel_spacing: (f64, f64),
) -> Result<Vec<f64>> {
    let px_area = pixel_spacing.0 * pixel_spacing.1;
    labels
        .iter()
        .map(|pair| {
            let mab = count_fg(&pair.mab_mask);
            let lib = count_fg(&pair.lib_mask);
            if pair
                .lib_mask
                .iter()
                .zip(pair.mab_mask.iter())
                .any(|(l, m)| *l != 0 && *m == 0)
            {
                return Err(Error::Geometry(format!(
                    "slice {}: LIB extends outside MAB, wall area undefined",
                    pair.slice_index
                )));
            }
            Ok((mab - lib) as f64 * px_area)
        })
        .collect()
}

/// Point in polygon by even-odd ray casting.
fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > p[1]) != (yj > p[1]) {
            let x_cross = xj + (p[1] - yj) / (yi - yj) * (xi - xj);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Point-wise wall thickness: the matched distances between the outer (MAB)
/// and inner (LIB) contours. The inner contour must lie inside (or on) the
/// outer one; contact within 1e-6 mm counts as inside so coincident
/// boundaries are accepted.
pub fn vwt_profile(mab: &Contour, lib: &Contour) -> Result<Vec<f64>> {
    for &p in lib.points() {
        if !point_in_polygon(p, mab.points())
            && crate::metrics::distance_to_contour(mab, p) > 1e-6
        {
            return Err(Error::Geometry(format!(
                "inner contour point ({:.3}, {:.3}) lies outside the outer contour",
                p[0], p[1]
            )));
        }
    }
    let pairs = symmetric_correspondence(mab, lib)?;
    Ok(pairs.into_iter().map(|p| p.distance).collect())
}

/// Full per-volume report from ground-truth-format labels and, where both
/// contours exist, per-slice thickness profiles.
///
/// Slices whose masks are empty or fragmented get an empty profile; the wall
/// volume itself never depends on contours.
pub fn volume_report(
    labels: &[LabelPair],
    pixel_spacing: (f64, f64),
    slice_spacing: f64,
) -> Result<VolumeReport> {
    let per_slice_wall_area = per_slice_wall_areas(labels, pixel_spacing)?;
    let vwv = per_slice_wall_area.iter().sum::<f64>() * slice_spacing;
    let mut vwt_profiles = Vec::with_capacity(labels.len());
    for pair in labels {
        let profile = match (
            crate::metrics::extract_contour(&pair.mab_mask, pixel_spacing),
            crate::metrics::extract_contour(&pair.lib_mask, pixel_spacing),
        ) {
            (Ok(mab), Ok(lib)) => vwt_profile(&mab, &lib).unwrap_or_default(),
            _ => Vec::new(),
        };
        vwt_profiles.push(profile);
    }
    let all: Vec<f64> = vwt_profiles.iter().flatten().copied().collect();
    let (vwt_mean, vwt_max) = if all.is_empty() {
        (None, None)
    } else {
        (
            Some(all.iter().sum::<f64>() / all.len() as f64),
            Some(all.iter().fold(0.0f64, |m, &v| m.max(v))),
        )
    };
    Ok(VolumeReport {
        vwv,
        per_slice_wall_area,
        vwt_profiles,
        vwt_mean,
        vwt_max,
    })
}
