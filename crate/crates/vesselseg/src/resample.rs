//! Pixel-level 2D resampling primitives: crop-and-resize maps with mask
//! back-projection, flips, integer translation, and rotation about the image
//! center. Coordinates are (row, col); resizing aligns pixel centers, so a
//! same-size resample is exactly the identity.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Grayscale image plane, values in [0, 1].
pub type Image = Array2<f32>;
/// Binary mask plane, values {0, 1}.
pub type Mask = Array2<u8>;

/// Center-aligned source coordinate for destination index `dst` under `scale`
/// = src_len / dst_len.
#[inline]
fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

fn sample_bilinear(src: ArrayView2<'_, f32>, r: f64, c: f64) -> f32 {
    let (h, w) = src.dim();
    let r = r.clamp(0.0, (h - 1) as f64);
    let c = c.clamp(0.0, (w - 1) as f64);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = (r - r0 as f64) as f32;
    let fc = (c - c0 as f64) as f32;
    let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
    let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
    top * (1.0 - fr) + bottom * fr
}

fn sample_nearest(src: ArrayView2<'_, u8>, r: f64, c: f64) -> u8 {
    let (h, w) = src.dim();
    let ri = r.round().clamp(0.0, (h - 1) as f64) as usize;
    let ci = c.round().clamp(0.0, (w - 1) as f64) as usize;
    src[[ri, ci]]
}

/// Descriptor of a crop-and-resize from a source slice to a fixed working
/// resolution. The same map resamples images (bilinear) and masks (nearest),
/// and projects predicted masks back into full-frame source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleMap {
    src_shape: (usize, usize),
    crop_origin: (usize, usize),
    crop_shape: (usize, usize),
    dst_shape: (usize, usize),
}

impl ResampleMap {
    /// Map resampling the whole source plane to `dst_shape`.
    pub fn full_frame(src_shape: (usize, usize), dst_shape: (usize, usize)) -> Result<Self> {
        Self::cropped(src_shape, (0, 0), src_shape, dst_shape)
    }

    /// Map resampling the `crop_shape` window at `crop_origin` to `dst_shape`.
    pub fn cropped(
        src_shape: (usize, usize),
        crop_origin: (usize, usize),
        crop_shape: (usize, usize),
        dst_shape: (usize, usize),
    ) -> Result<Self> {
        if crop_shape.0 < 2 || crop_shape.1 < 2 {
            return Err(Error::InvalidArgument(format!(
                "resample source window {}x{} is degenerate (need at least 2x2)",
                crop_shape.0, crop_shape.1
            )));
        }
        if dst_shape.0 == 0 || dst_shape.1 == 0 {
            return Err(Error::InvalidArgument(
                "resample target has zero area".into(),
            ));
        }
        if crop_origin.0 + crop_shape.0 > src_shape.0 || crop_origin.1 + crop_shape.1 > src_shape.1
        {
            return Err(Error::InvalidArgument(format!(
                "crop window {:?}+{:?} exceeds source shape {:?}",
                crop_origin, crop_shape, src_shape
            )));
        }
        Ok(ResampleMap {
            src_shape,
            crop_origin,
            crop_shape,
            dst_shape,
        })
    }

    pub fn src_shape(&self) -> (usize, usize) {
        self.src_shape
    }

    pub fn dst_shape(&self) -> (usize, usize) {
        self.dst_shape
    }

    fn check_src<T>(&self, src: &Array2<T>) -> Result<()> {
        if src.dim() != self.src_shape {
            return Err(Error::Shape(format!(
                "expected source {:?}, got {:?}",
                self.src_shape,
                src.dim()
            )));
        }
        Ok(())
    }

    /// Crops and bilinearly resamples an intensity plane.
    pub fn apply_image(&self, src: &Image) -> Result<Image> {
        self.check_src(src)?;
        let (r0, c0) = self.crop_origin;
        let (ch, cw) = self.crop_shape;
        let window = src.slice(s![r0..r0 + ch, c0..c0 + cw]);
        let (dh, dw) = self.dst_shape;
        let scale_r = ch as f64 / dh as f64;
        let scale_c = cw as f64 / dw as f64;
        Ok(Array2::from_shape_fn((dh, dw), |(r, c)| {
            sample_bilinear(window, src_coord(r, scale_r), src_coord(c, scale_c))
        }))
    }

    /// Crops and nearest-neighbor resamples a binary mask.
    pub fn apply_mask(&self, src: &Mask) -> Result<Mask> {
        self.check_src(src)?;
        let (r0, c0) = self.crop_origin;
        let (ch, cw) = self.crop_shape;
        let window = src.slice(s![r0..r0 + ch, c0..c0 + cw]);
        let (dh, dw) = self.dst_shape;
        let scale_r = ch as f64 / dh as f64;
        let scale_c = cw as f64 / dw as f64;
        Ok(Array2::from_shape_fn((dh, dw), |(r, c)| {
            sample_nearest(window, src_coord(r, scale_r), src_coord(c, scale_c))
        }))
    }

    /// Projects a mask at the working resolution back into a full-frame mask
    /// in source coordinates; pixels outside the crop window stay zero.
    pub fn restore_mask(&self, mask: &Mask) -> Result<Mask> {
        if mask.dim() != self.dst_shape {
            return Err(Error::Shape(format!(
                "expected mask {:?}, got {:?}",
                self.dst_shape,
                mask.dim()
            )));
        }
        let (dh, dw) = self.dst_shape;
        let (ch, cw) = self.crop_shape;
        let scale_r = dh as f64 / ch as f64;
        let scale_c = dw as f64 / cw as f64;
        let mut out = Array2::zeros(self.src_shape);
        let (r0, c0) = self.crop_origin;
        for r in 0..ch {
            for c in 0..cw {
                out[[r0 + r, c0 + c]] =
                    sample_nearest(mask.view(), src_coord(r, scale_r), src_coord(c, scale_c));
            }
        }
        Ok(out)
    }
}

/// Mirrors columns (flip about the vertical center line).
pub fn hflip<T: Clone>(a: &Array2<T>) -> Array2<T> {
    a.slice(s![.., ..;-1]).to_owned()
}

/// Mirrors rows (flip about the horizontal center line).
pub fn vflip<T: Clone>(a: &Array2<T>) -> Array2<T> {
    a.slice(s![..;-1, ..]).to_owned()
}

/// Shifts content down by `dy` rows and right by `dx` columns; vacated pixels
/// are zero.
pub fn translate_zero_fill<T: Copy + Default>(a: &Array2<T>, dy: usize, dx: usize) -> Array2<T> {
    let (h, w) = a.dim();
    let mut out = Array2::default((h, w));
    if dy < h && dx < w {
        out.slice_mut(s![dy.., dx..])
            .assign(&a.slice(s![..h - dy, ..w - dx]));
    }
    out
}

/// Rotation matrix entries for an inverse mapping by `degrees` about the
/// image center ((h-1)/2, (w-1)/2).
fn inverse_rotation(degrees: f64) -> (f64, f64) {
    let theta = degrees.to_radians();
    (theta.cos(), theta.sin())
}

/// Rotates an intensity plane by `degrees` about the image center with
/// bilinear sampling; pixels pulled from outside the source are zero.
pub fn rotate_image(img: &Image, degrees: f64) -> Image {
    let (h, w) = img.dim();
    let (cos_t, sin_t) = inverse_rotation(degrees);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let sr = cy + (-sin_t * dx + cos_t * dy);
        let sc = cx + (cos_t * dx + sin_t * dy);
        if sr < -0.5 || sr > h as f64 - 0.5 || sc < -0.5 || sc > w as f64 - 0.5 {
            0.0
        } else {
            sample_bilinear(img.view(), sr, sc)
        }
    })
}

/// Rotates a binary mask by `degrees` about the image center with
/// nearest-neighbor sampling; pixels pulled from outside the source are zero.
pub fn rotate_mask(mask: &Mask, degrees: f64) -> Mask {
    let (h, w) = mask.dim();
    let (cos_t, sin_t) = inverse_rotation(degrees);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let sr = cy + (-sin_t * dx + cos_t * dy);
        let sc = cx + (cos_t * dx + sin_t * dy);
        if sr < -0.5 || sr > h as f64 - 0.5 || sc < -0.5 || sc > w as f64 - 0.5 {
            0
        } else {
            sample_nearest(mask.view(), sr, sc)
        }
    })
}
