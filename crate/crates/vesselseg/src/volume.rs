//! Volume data model and on-disk formats.
//!
//! A volume is a directory of zero-padded grayscale PNG slices
//! (`slice_0000.png`, ...) plus a `volume.json` sidecar carrying physical
//! spacings and optional region-of-interest endpoint boxes. Ground-truth or
//! predicted wall masks live in a `labels/` subdirectory mirroring the slice
//! names with `_mab.png` / `_lib.png` suffixes (MAB = outer media-adventitia
//! boundary, LIB = inner lumen-intima boundary; the LIB interior is always
//! nested inside the MAB interior).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{Image, Mask, ResampleMap};

/// Working resolution fed to the segmentation network: (rows, cols).
pub const DEFAULT_INPUT_SIZE: (usize, usize) = (256, 320);

/// Pixels added on every side of an endpoint region-of-interest box before
/// interpolation across slices.
pub const ROI_EXPAND_PX: i64 = 20;

/// A 3D grayscale image with physical voxel spacing.
///
/// `voxels` is indexed `[slice, row, col]` with processed intensities in
/// [0, 1]. `in_plane_spacing` is mm per pixel as (x, y) = (col, row);
/// `slice_spacing` is mm between consecutive slices.
#[derive(Debug, Clone)]
pub struct Volume {
    pub voxels: Array3<f32>,
    pub in_plane_spacing: (f64, f64),
    pub slice_spacing: f64,
    pub slice_axis_label: String,
    pub subject_id: Option<String>,
    pub roi_first: Option<RoiBox>,
    pub roi_last: Option<RoiBox>,
}

impl Volume {
    pub fn new(
        voxels: Array3<f32>,
        in_plane_spacing: (f64, f64),
        slice_spacing: f64,
    ) -> Result<Self> {
        if in_plane_spacing.0 <= 0.0 || in_plane_spacing.1 <= 0.0 || slice_spacing <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be positive, got in-plane {:?}, slice {}",
                in_plane_spacing, slice_spacing
            )));
        }
        Ok(Volume {
            voxels,
            in_plane_spacing,
            slice_spacing,
            slice_axis_label: "axial".to_string(),
            subject_id: None,
            roi_first: None,
            roi_last: None,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.voxels.dim().0
    }

    /// (rows, cols) of every slice.
    pub fn slice_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.voxels.dim();
        (h, w)
    }

    pub fn slice_view(&self, index: usize) -> ArrayView2<'_, f32> {
        self.voxels.index_axis(ndarray::Axis(0), index)
    }

    pub fn slice_image(&self, index: usize) -> Image {
        self.slice_view(index).to_owned()
    }

    /// Physical area of one pixel in mm^2.
    pub fn pixel_area_mm2(&self) -> f64 {
        self.in_plane_spacing.0 * self.in_plane_spacing.1
    }

    /// Rescales intensities to span [0, 1] using the volume-wide min/max.
    /// Constant volumes map to all zeros. Idempotent.
    pub fn normalize_intensities(&mut self) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in self.voxels.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            self.voxels.fill(0.0);
            return;
        }
        let scale = 1.0 / (hi - lo);
        self.voxels.mapv_inplace(|v| (v - lo) * scale);
    }
}

/// Per-slice binary masks for the MAB and LIB interiors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPair {
    pub mab_mask: Mask,
    pub lib_mask: Mask,
    pub slice_index: usize,
}

impl LabelPair {
    /// Builds a pair after checking that both masks share dimensions and the
    /// LIB interior is a pixel-wise subset of the MAB interior.
    pub fn new(mab_mask: Mask, lib_mask: Mask, slice_index: usize) -> Result<Self> {
        if mab_mask.dim() != lib_mask.dim() {
            return Err(Error::Shape(format!(
                "label masks of slice {} differ in shape: {:?} vs {:?}",
                slice_index,
                mab_mask.dim(),
                lib_mask.dim()
            )));
        }
        if lib_mask
            .iter()
            .zip(mab_mask.iter())
            .any(|(l, m)| *l != 0 && *m == 0)
        {
            return Err(Error::Format(format!(
                "slice {}: LIB mask is not contained in MAB mask",
                slice_index
            )));
        }
        Ok(LabelPair {
            mab_mask,
            lib_mask,
            slice_index,
        })
    }

    /// Wall region: MAB interior minus LIB interior.
    pub fn wall_mask(&self) -> Mask {
        let mut wall = self.mab_mask.clone();
        ndarray::Zip::from(&mut wall)
            .and(&self.lib_mask)
            .for_each(|w, &l| {
                if l != 0 {
                    *w = 0;
                }
            });
        wall
    }
}

/// Axis-aligned region of interest on one slice. `top_left` is inclusive,
/// `bottom_right` exclusive, both as (row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub slice: usize,
    pub top_left: [i64; 2],
    pub bottom_right: [i64; 2],
}

impl RoiBox {
    pub fn new(slice: usize, top_left: [i64; 2], bottom_right: [i64; 2]) -> Result<Self> {
        if top_left[0] >= bottom_right[0] || top_left[1] >= bottom_right[1] {
            return Err(Error::InvalidArgument(format!(
                "roi box corners out of order: {:?} vs {:?}",
                top_left, bottom_right
            )));
        }
        Ok(RoiBox {
            slice,
            top_left,
            bottom_right,
        })
    }

    pub fn height(&self) -> i64 {
        self.bottom_right[0] - self.top_left[0]
    }

    pub fn width(&self) -> i64 {
        self.bottom_right[1] - self.top_left[1]
    }

    /// Crop window as ((row, col) origin, (rows, cols) shape), assuming the
    /// box already lies inside `bounds`.
    pub fn window(&self) -> ((usize, usize), (usize, usize)) {
        (
            (self.top_left[0] as usize, self.top_left[1] as usize),
            (self.height() as usize, self.width() as usize),
        )
    }
}

/// Grows one axis interval by `margin` on both ends, keeping its length by
/// shifting overflow to the other end before clamping to [0, len].
fn expand_axis(lo: i64, hi: i64, margin: i64, len: i64) -> (i64, i64) {
    let mut lo = lo - margin;
    let mut hi = hi + margin;
    if lo < 0 {
        hi -= lo;
        lo = 0;
    }
    if hi > len {
        lo -= hi - len;
        hi = len;
    }
    (lo.max(0), hi.min(len))
}

/// Expands a box by `margin` pixels per side inside an image of `bounds` =
/// (rows, cols). The expanded box keeps its grown size where possible by
/// shifting away from the border, then clamps.
pub fn expand_roi(roi: &RoiBox, margin: i64, bounds: (usize, usize)) -> RoiBox {
    let (r0, r1) = expand_axis(
        roi.top_left[0],
        roi.bottom_right[0],
        margin,
        bounds.0 as i64,
    );
    let (c0, c1) = expand_axis(
        roi.top_left[1],
        roi.bottom_right[1],
        margin,
        bounds.1 as i64,
    );
    RoiBox {
        slice: roi.slice,
        top_left: [r0, c0],
        bottom_right: [r1, c1],
    }
}

/// Rounds half-down; used for top-left corners so ties grow the box.
fn round_half_down(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// Rounds half-up; used for bottom-right corners so ties grow the box.
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Produces one box per slice in `first.slice ..= last.slice`.
///
/// Both endpoint boxes are first expanded by [`ROI_EXPAND_PX`] per side
/// (size-preserving shift, then clamp, within `bounds`); intermediate corners
/// are linear interpolations rounded to the nearest integer with ties toward
/// the larger box. The endpoint slices return exactly the expanded inputs.
pub fn interpolate_roi(first: &RoiBox, last: &RoiBox, bounds: (usize, usize)) -> Result<Vec<RoiBox>> {
    if first.slice >= last.slice {
        return Err(Error::InvalidArgument(format!(
            "roi endpoints must be on increasing slices, got {} and {}",
            first.slice, last.slice
        )));
    }
    let a = expand_roi(first, ROI_EXPAND_PX, bounds);
    let b = expand_roi(last, ROI_EXPAND_PX, bounds);
    let span = (last.slice - first.slice) as f64;
    let mut boxes = Vec::with_capacity(last.slice - first.slice + 1);
    for slice in first.slice..=last.slice {
        if slice == first.slice {
            boxes.push(a);
            continue;
        }
        if slice == last.slice {
            boxes.push(b);
            continue;
        }
        let t = (slice - first.slice) as f64 / span;
        let lerp = |p: i64, q: i64| p as f64 + (q - p) as f64 * t;
        boxes.push(RoiBox {
            slice,
            top_left: [
                round_half_down(lerp(a.top_left[0], b.top_left[0])),
                round_half_down(lerp(a.top_left[1], b.top_left[1])),
            ],
            bottom_right: [
                round_half_up(lerp(a.bottom_right[0], b.bottom_right[0])),
                round_half_up(lerp(a.bottom_right[1], b.bottom_right[1])),
            ],
        });
    }
    Ok(boxes)
}

/// Builds the crop-and-resize map for one slice: the full frame for plain
/// acquisitions, or `roi` when given, resampled to `input_size`.
pub fn slice_resample_map(
    slice_shape: (usize, usize),
    roi: Option<&RoiBox>,
    input_size: (usize, usize),
) -> Result<ResampleMap> {
    match roi {
        None => ResampleMap::full_frame(slice_shape, input_size),
        Some(b) => {
            let (origin, shape) = b.window();
            ResampleMap::cropped(slice_shape, origin, shape, input_size)
        }
    }
}

/// Subject-level dataset partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn contains_train(&self, id: &str) -> bool {
        self.train_ids.iter().any(|s| s == id)
    }
    pub fn contains_val(&self, id: &str) -> bool {
        self.val_ids.iter().any(|s| s == id)
    }
    pub fn contains_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|s| s == id)
    }
}

/// Splits subjects 60/20/20 by count (rounded; the test partition takes the
/// remainder). Deterministic under `seed` and independent of input order.
pub fn make_split(subject_ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let mut ids: Vec<String> = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 subjects to split, got {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let train_ids = ids[..n_train].to_vec();
    let val_ids = ids[n_train..n_train + n_val].to_vec();
    let test_ids = ids[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    in_plane_spacing_mm: [f64; 2],
    slice_spacing_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slice_axis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi_first: Option<RoiBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi_last: Option<RoiBox>,
}

fn slice_file_name(index: usize) -> String {
    format!("slice_{index:04}.png")
}

/// Reads an 8-bit grayscale PNG into (rows, cols).
pub fn read_gray_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes (rows, cols) bytes as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, data: &Array2<u8>) -> Result<()> {
    let (h, w) = data.dim();
    let buf = data
        .as_standard_layout()
        .iter()
        .copied()
        .collect::<Vec<u8>>();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| Error::image(path, e))
}

fn list_slice_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("slice_") && name.ends_with(".png") {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Loads a volume directory and linearly rescales intensities to [0, 1].
pub fn load_volume(dir: &Path) -> Result<Volume> {
    let sidecar_path = dir.join("volume.json");
    let sidecar_text = fs::read_to_string(&sidecar_path).map_err(|e| {
        Error::Format(format!(
            "missing or unreadable sidecar {}: {e}",
            sidecar_path.display()
        ))
    })?;
    let sidecar: Sidecar = serde_json::from_str(&sidecar_text)?;

    let files = list_slice_files(dir)?;
    if files.is_empty() {
        return Err(Error::Format(format!(
            "no slice files in {}",
            dir.display()
        )));
    }
    let first = read_gray_png(&files[0])?;
    let (h, w) = first.dim();
    let mut voxels = Array3::<f32>::zeros((files.len(), h, w));
    for (i, file) in files.iter().enumerate() {
        let slice = if i == 0 { first.clone() } else { read_gray_png(file)? };
        if slice.dim() != (h, w) {
            return Err(Error::Format(format!(
                "slice {} has shape {:?}, expected {:?}",
                file.display(),
                slice.dim(),
                (h, w)
            )));
        }
        voxels
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&slice.mapv(f32::from));
    }

    let mut volume = Volume::new(
        voxels,
        (sidecar.in_plane_spacing_mm[0], sidecar.in_plane_spacing_mm[1]),
        sidecar.slice_spacing_mm,
    )?;
    if let Some(axis) = sidecar.slice_axis {
        volume.slice_axis_label = axis;
    }
    volume.subject_id = sidecar.subject_id;
    volume.roi_first = sidecar.roi_first;
    volume.roi_last = sidecar.roi_last;
    volume.normalize_intensities();
    Ok(volume)
}

/// Writes a volume directory (slices as 8-bit PNGs plus the JSON sidecar).
/// Intensities are quantized from [0, 1] to 0..=255.
pub fn save_volume(dir: &Path, volume: &Volume) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..volume.n_slices() {
        let slice = volume
            .slice_view(i)
            .mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        write_gray_png(&dir.join(slice_file_name(i)), &slice)?;
    }
    let sidecar = Sidecar {
        in_plane_spacing_mm: [volume.in_plane_spacing.0, volume.in_plane_spacing.1],
        slice_spacing_mm: volume.slice_spacing,
        slice_axis: Some(volume.slice_axis_label.clone()),
        subject_id: volume.subject_id.clone(),
        roi_first: volume.roi_first,
        roi_last: volume.roi_last,
    };
    let path = dir.join("volume.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
}

/// Default location of a volume's label directory.
pub fn labels_dir(volume_dir: &Path) -> PathBuf {
    volume_dir.join("labels")
}

/// Loads per-slice mask pairs from a label directory. Slice indices run
/// 0..n_slices; masks are binarized at 128 and validated for nesting.
pub fn load_labels(dir: &Path, n_slices: usize) -> Result<Vec<LabelPair>> {
    let mut labels = Vec::with_capacity(n_slices);
    for i in 0..n_slices {
        let mab_path = dir.join(format!("slice_{i:04}_mab.png"));
        let lib_path = dir.join(format!("slice_{i:04}_lib.png"));
        let mab = read_gray_png(&mab_path)?.mapv(|v| u8::from(v >= 128));
        let lib = read_gray_png(&lib_path)?.mapv(|v| u8::from(v >= 128));
        labels.push(LabelPair::new(mab, lib, i)?);
    }
    Ok(labels)
}

/// Writes per-slice mask pairs (0/255 PNGs) into a label directory.
pub fn save_labels(dir: &Path, labels: &[LabelPair]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for pair in labels {
        let i = pair.slice_index;
        write_gray_png(
            &dir.join(format!("slice_{i:04}_mab.png")),
            &pair.mab_mask.mapv(|v| v * 255),
        )?;
        write_gray_png(
            &dir.join(format!("slice_{i:04}_lib.png")),
            &pair.lib_mask.mapv(|v| v * 255),
        )?;
    }
    Ok(())
}
