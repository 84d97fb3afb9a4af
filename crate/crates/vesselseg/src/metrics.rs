//! Segmentation evaluation: area overlap (DSC), sub-pixel boundary contours,
//! symmetric point correspondence between contours, and the MAD/MAXD distance
//! summaries, plus the CSV record format used by the evaluation drivers.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::Mask;

/// Dice similarity coefficient 2|A∩M| / (|A| + |M|) on binary masks.
/// Two empty masks agree perfectly and score 1.
pub fn dsc(a: &Mask, m: &Mask) -> f64 {
    debug_assert_eq!(a.dim(), m.dim());
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.iter().zip(m.iter()) {
        let xf = x != 0;
        let yf = y != 0;
        inter += usize::from(xf && yf);
        total += usize::from(xf) + usize::from(yf);
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Closed boundary polyline in millimetres. Points are (x, y) = (col *
/// spacing_x, row * spacing_y); orientation is normalized so the shoelace
/// area is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<[f64; 2]>,
}

impl Contour {
    /// Builds a closed contour from ordered points, dropping consecutive
    /// duplicates and normalizing orientation.
    pub fn new(mut points: Vec<[f64; 2]>) -> Result<Self> {
        points.dedup_by(|a, b| a == b);
        if points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        if points.len() < 3 {
            return Err(Error::Geometry(format!(
                "contour needs at least 3 distinct points, got {}",
                points.len()
            )));
        }
        let mut contour = Contour { points };
        if contour.signed_area() < 0.0 {
            contour.points.reverse();
        }
        Ok(contour)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Shoelace area; positive for the normalized orientation.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut acc = 0.0;
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        acc / 2.0
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let [x0, y0] = self.points[i];
                let [x1, y1] = self.points[(i + 1) % n];
                ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
            })
            .sum()
    }

    /// Applies the same rigid motion to every point.
    pub fn transformed(&self, rotation_deg: f64, translation: [f64; 2]) -> Contour {
        let t = rotation_deg.to_radians();
        let (s, c) = t.sin_cos();
        Contour {
            points: self
                .points
                .iter()
                .map(|&[x, y]| {
                    [
                        c * x - s * y + translation[0],
                        s * x + c * y + translation[1],
                    ]
                })
                .collect(),
        }
    }

    /// `k` points spaced at equal arc length along the closed polyline,
    /// starting from the first vertex.
    pub fn resample_equal_arclength(&self, k: usize) -> Vec<[f64; 2]> {
        debug_assert!(k >= 3);
        let n = self.points.len();
        let mut seg_len = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            let l = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            seg_len.push(l);
            total += l;
        }
        let mut out = Vec::with_capacity(k);
        let step = total / k as f64;
        let mut seg = 0usize;
        let mut seg_start = 0.0;
        for i in 0..k {
            let target = i as f64 * step;
            while seg_start + seg_len[seg] < target && seg + 1 < n {
                seg_start += seg_len[seg];
                seg += 1;
            }
            let local = if seg_len[seg] > 0.0 {
                ((target - seg_start) / seg_len[seg]).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let [x0, y0] = self.points[seg];
            let [x1, y1] = self.points[(seg + 1) % n];
            out.push([x0 + (x1 - x0) * local, y0 + (y1 - y0) * local]);
        }
        out
    }
}

/// Closest point to `p` on the closed polyline through `poly`.
fn nearest_on_polyline(poly: &[[f64; 2]], p: [f64; 2]) -> ([f64; 2], f64) {
    let n = poly.len();
    let mut best = (poly[0], f64::INFINITY);
    for i in 0..n {
        let [ax, ay] = poly[i];
        let [bx, by] = poly[(i + 1) % n];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [ax + t * dx, ay + t * dy];
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

/// Distance from a point to the closed polyline of a contour, in mm.
pub fn distance_to_contour(contour: &Contour, p: [f64; 2]) -> f64 {
    nearest_on_polyline(contour.points(), p).1
}

/// One matched point pair with its Euclidean distance in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub on_first: [f64; 2],
    pub on_second: [f64; 2],
    pub distance: f64,
}

/// Bidirectional nearest-point matching between two closed contours.
///
/// Both contours are resampled to K = max(len1, len2, 100) equal-arc-length
/// points; every resampled point of each contour is matched to its nearest
/// point on the other polyline, giving 2K pairs. The distance multiset is
/// symmetric in the argument order by construction.
pub fn symmetric_correspondence(c1: &Contour, c2: &Contour) -> Result<Vec<CorrespondencePair>> {
    if c1.perimeter() <= 0.0 || c2.perimeter() <= 0.0 {
        return Err(Error::Geometry("degenerate zero-length contour".into()));
    }
    let k = c1.len().max(c2.len()).max(100);
    let p1 = c1.resample_equal_arclength(k);
    let p2 = c2.resample_equal_arclength(k);
    let mut pairs = Vec::with_capacity(2 * k);
    for &p in &p1 {
        let (q, d) = nearest_on_polyline(&p2, p);
        pairs.push(CorrespondencePair {
            on_first: p,
            on_second: q,
            distance: d,
        });
    }
    for &q in &p2 {
        let (p, d) = nearest_on_polyline(&p1, q);
        pairs.push(CorrespondencePair {
            on_first: p,
            on_second: q,
            distance: d,
        });
    }
    Ok(pairs)
}

/// Mean and maximum of the matched distances.
pub fn mad_maxd(pairs: &[CorrespondencePair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Geometry("no correspondence pairs".into()));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for p in pairs {
        sum += p.distance;
        max = max.max(p.distance);
    }
    Ok((sum / pairs.len() as f64, max))
}

/// Marching-squares case table: segments as (edge, edge) index pairs with
/// edges 0 = top, 1 = right, 2 = bottom, 3 = left. Corner bit order is
/// top-left = 1, top-right = 2, bottom-right = 4, bottom-left = 8. The two
/// saddle cases connect the foreground diagonal.
const MS_SEGMENTS: [&[(u8, u8)]; 16] = [
    &[],
    &[(0, 3)],
    &[(0, 1)],
    &[(3, 1)],
    &[(1, 2)],
    &[(0, 1), (2, 3)],
    &[(0, 2)],
    &[(3, 2)],
    &[(3, 2)],
    &[(0, 2)],
    &[(0, 3), (1, 2)],
    &[(1, 2)],
    &[(3, 1)],
    &[(0, 1)],
    &[(0, 3)],
    &[],
];

/// Edge midpoint in doubled padded-grid coordinates; `(r, c)` is the cell's
/// top-left node.
fn edge_point(r: i64, c: i64, edge: u8) -> (i64, i64) {
    match edge {
        0 => (2 * r, 2 * c + 1),
        1 => (2 * r + 1, 2 * c + 2),
        2 => (2 * r + 2, 2 * c + 1),
        _ => (2 * r + 1, 2 * c),
    }
}

/// Closed moving average over polygon vertices (window 2 * half + 1). The
/// raw edge-midpoint polygon of a rasterized shape zig-zags at 45 degrees and
/// overestimates boundary length by several percent; averaging out the
/// half-pixel staircase recovers a sub-pixel boundary estimate.
fn smooth_closed_polyline(points: &[[f64; 2]], half: usize) -> Vec<[f64; 2]> {
    let n = points.len();
    if n < 2 * half + 4 {
        return points.to_vec();
    }
    let window = (2 * half + 1) as f64;
    (0..n)
        .map(|i| {
            let mut x = 0.0;
            let mut y = 0.0;
            for k in 0..=2 * half {
                let [px, py] = points[(i + n + k - half) % n];
                x += px;
                y += py;
            }
            [x / window, y / window]
        })
        .collect()
}

/// Extracts the sub-pixel iso-contour of a binary mask at the 0.5 level,
/// scaled to mm by `spacing` = (mm/px in x = columns, mm/px in y = rows).
///
/// The mask must contain exactly one foreground component without holes;
/// otherwise the boundary has several loops and the call fails (use
/// [`largest_component`] first if that is acceptable).
pub fn extract_contour(mask: &Mask, spacing: (f64, f64)) -> Result<Contour> {
    let (h, w) = mask.dim();
    let area = mask.iter().filter(|v| **v != 0).count();
    if area < 3 {
        return Err(Error::Geometry(format!(
            "mask has foreground area {area}, need at least 3 pixels"
        )));
    }
    let at = |r: i64, c: i64| -> u8 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0
        } else {
            u8::from(mask[[r as usize, c as usize]] != 0)
        }
    };

    // Undirected adjacency between edge midpoints; every crossing point is
    // shared by exactly two cells, so degrees are exactly 2.
    let mut adjacency: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    for r in -1..h as i64 {
        for c in -1..w as i64 {
            let case = at(r, c)
                | (at(r, c + 1) << 1)
                | (at(r + 1, c + 1) << 2)
                | (at(r + 1, c) << 3);
            for &(e1, e2) in MS_SEGMENTS[case as usize] {
                let p1 = edge_point(r, c, e1);
                let p2 = edge_point(r, c, e2);
                adjacency.entry(p1).or_default().push(p2);
                adjacency.entry(p2).or_default().push(p1);
            }
        }
    }
    if adjacency.is_empty() {
        return Err(Error::Geometry("mask produced no boundary".into()));
    }

    let start = *adjacency
        .keys()
        .min()
        .expect("non-empty adjacency has a minimum");
    let mut loop_points = vec![start];
    let mut prev = start;
    let mut current = adjacency[&start][0];
    while current != start {
        loop_points.push(current);
        let neighbors = &adjacency[&current];
        if neighbors.len() != 2 {
            return Err(Error::Geometry(format!(
                "boundary vertex {current:?} has degree {}",
                neighbors.len()
            )));
        }
        let next = if neighbors[0] == prev {
            neighbors[1]
        } else {
            neighbors[0]
        };
        prev = current;
        current = next;
    }
    if loop_points.len() < adjacency.len() {
        return Err(Error::Geometry(format!(
            "mask boundary has multiple loops ({} of {} vertices on the first); \
             expected a single hole-free component",
            loop_points.len(),
            adjacency.len()
        )));
    }

    // Doubled grid coordinates -> pixels -> mm.
    let raw: Vec<[f64; 2]> = loop_points
        .into_iter()
        .map(|(dr, dc)| [dc as f64 / 2.0 * spacing.0, dr as f64 / 2.0 * spacing.1])
        .collect();
    Contour::new(smooth_closed_polyline(&raw, 2))
}

/// Largest 4-connected foreground component and the total component count.
/// Returns `None` for an empty mask.
pub fn largest_component(mask: &Mask) -> Option<(Mask, usize)> {
    let (h, w) = mask.dim();
    let mut seen = Mask::zeros((h, w));
    let mut best: Option<(Vec<(usize, usize)>, usize)> = None;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            if mask[[r, c]] == 0 || seen[[r, c]] != 0 {
                continue;
            }
            count += 1;
            let mut stack = vec![(r, c)];
            let mut pixels = Vec::new();
            seen[[r, c]] = 1;
            while let Some((pr, pc)) = stack.pop() {
                pixels.push((pr, pc));
                let mut push = |nr: usize, nc: usize, seen: &mut Mask| {
                    if mask[[nr, nc]] != 0 && seen[[nr, nc]] == 0 {
                        seen[[nr, nc]] = 1;
                        stack.push((nr, nc));
                    }
                };
                if pr > 0 {
                    push(pr - 1, pc, &mut seen);
                }
                if pr + 1 < h {
                    push(pr + 1, pc, &mut seen);
                }
                if pc > 0 {
                    push(pr, pc - 1, &mut seen);
                }
                if pc + 1 < w {
                    push(pr, pc + 1, &mut seen);
                }
            }
            if best.as_ref().map_or(true, |(b, _)| pixels.len() > b.len()) {
                best = Some((pixels, count));
            }
        }
    }
    best.map(|(pixels, _)| {
        let mut out = Mask::zeros((h, w));
        for (r, c) in pixels {
            out[[r, c]] = 1;
        }
        (out, count)
    })
}

/// Which boundary a record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    #[serde(rename = "MAB")]
    Mab,
    #[serde(rename = "LIB")]
    Lib,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Mab => "MAB",
            Boundary::Lib => "LIB",
        })
    }
}

/// One per-slice, per-boundary evaluation row. Distance metrics are absent
/// when either mask on the slice is empty (no contour exists).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub volume: String,
    #[serde(rename = "slice")]
    pub slice_index: usize,
    pub boundary: Boundary,
    pub dsc: f64,
    pub mad: Option<f64>,
    pub maxd: Option<f64>,
}

/// Writes records as `volume,slice,boundary,dsc,mad,maxd`.
pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}
