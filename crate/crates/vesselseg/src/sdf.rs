//! Exact Euclidean distance transforms and signed distance maps for binary
//! masks, via the separable lower-envelope-of-parabolas algorithm applied
//! along columns and then rows.

use ndarray::Array2;

use crate::resample::Mask;

/// Distance assigned when the reference set is empty; larger than any
/// in-image distance so signs stay meaningful in degenerate slices.
pub const EMPTY_SET_DISTANCE: f64 = 1e9;

/// 1D squared-distance transform of sampled function `f`, writing the result
/// into `d`. `v` and `z` are scratch buffers of length n and n + 1.
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    debug_assert!(n > 0);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest pixel where `in_set`
/// is true. Pixels in the set get 0; if the set is empty, every pixel gets
/// [`EMPTY_SET_DISTANCE`].
pub fn distance_to_set(in_set: &Array2<bool>) -> Array2<f64> {
    let (h, w) = in_set.dim();
    let far = EMPTY_SET_DISTANCE * EMPTY_SET_DISTANCE;
    let mut sq = Array2::<f64>::from_elem((h, w), far);
    for ((r, c), &inside) in in_set.indexed_iter() {
        if inside {
            sq[[r, c]] = 0.0;
        }
    }

    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    // Columns first, then rows; the transform is separable.
    for c in 0..w {
        for r in 0..h {
            f[r] = sq[[r, c]];
        }
        dt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
        for r in 0..h {
            sq[[r, c]] = d[r];
        }
    }
    for r in 0..h {
        for c in 0..w {
            f[c] = sq[[r, c]];
        }
        dt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
        for c in 0..w {
            sq[[r, c]] = d[c];
        }
    }

    sq.mapv_into(|x| x.sqrt().min(EMPTY_SET_DISTANCE))
}

/// Signed distance map of a binary mask, positive inside: distance to the
/// nearest background pixel minus distance to the nearest foreground pixel.
/// Thresholding at >= 0 recovers the mask exactly.
pub fn signed_distance(mask: &Mask) -> Array2<f64> {
    let fg = mask.mapv(|v| v != 0);
    let bg = mask.mapv(|v| v == 0);
    let d_fg = distance_to_set(&fg);
    let d_bg = distance_to_set(&bg);
    &d_bg - &d_fg
}

/// Recovers a mask from a signed distance map (positive-inside convention).
pub fn threshold_sdf(sdf: &Array2<f64>) -> Mask {
    sdf.mapv(|v| u8::from(v >= 0.0))
}
