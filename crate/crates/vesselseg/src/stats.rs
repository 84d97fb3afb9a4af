//! Agreement and comparison statistics: Pearson correlation with a t-test
//! p-value, Bland-Altman limits of agreement, and Tukey's honestly
//! significant difference test backed by a numerically integrated studentized
//! range distribution.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Guards pooled variances of near-identical groups against division by zero.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Sample Pearson correlation and its two-sided p-value from the
/// t-distribution with n - 2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "pearson needs at least 3 paired samples".into(),
        ));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "pearson is undefined for zero-variance input".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if 1.0 - r * r <= f64::EPSILON {
        0.0
    } else {
        let t = r.abs() * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

/// Bland-Altman agreement summary of paired measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Mean of a - b.
    pub bias: f64,
    /// bias - 1.96 * sd of the differences (sample sd, n - 1).
    pub loa_low: f64,
    /// bias + 1.96 * sd of the differences.
    pub loa_high: f64,
    pub n: usize,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "bland-altman inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "bland-altman needs at least 3 pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let bias = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    Ok(BlandAltman {
        bias,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        n,
    })
}

/// Cumulative distribution of the studentized range statistic with `k`
/// groups and `df` error degrees of freedom.
///
/// Evaluated by composite-Simpson quadrature of
///   C(df) * ∫ s^(df-1) e^(-df s²/2) P_z(q s; k) ds  over s in (0, 1 + 14/√df]
/// with the inner probability
///   P_z(w; k) = k ∫ φ(z) (Φ(z) - Φ(z - w))^(k-1) dz  over z in [-8, 8 + w],
/// which reproduces reference values to well below 1e-6.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    debug_assert!(k >= 2);
    debug_assert!(df >= 1.0);
    if q <= 0.0 {
        return 0.0;
    }
    let ln_c = 0.5 * df * df.ln() - ln_gamma(0.5 * df) - (0.5 * df - 1.0) * 2.0f64.ln();
    let s_hi = 1.0 + 14.0 / df.sqrt();
    const OUTER: usize = 200;
    let h = s_hi / OUTER as f64;
    let mut acc = 0.0;
    for i in 0..=OUTER {
        let s = i as f64 * h;
        let f = if s == 0.0 {
            0.0
        } else {
            let ln_f = (df - 1.0) * s.ln() - 0.5 * df * s * s;
            (ln_c + ln_f).exp() * range_probability(q * s, k)
        };
        let coef = if i == 0 || i == OUTER {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += coef * f;
    }
    (acc * h / 3.0).clamp(0.0, 1.0)
}

/// P(range of k standard normals <= w).
fn range_probability(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    // P(range > 16) <= 2k Phi(-8), below 1e-14 for any practical k; bailing
    // out keeps the fixed-step quadrature well resolved for extreme w.
    if w >= 16.0 {
        return 1.0;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let lo = -8.0;
    let hi = 8.0 + w;
    const INNER: usize = 240;
    let h = (hi - lo) / INNER as f64;
    let mut acc = 0.0;
    for i in 0..=INNER {
        let z = lo + i as f64 * h;
        let f = normal.pdf(z) * (normal.cdf(z) - normal.cdf(z - w)).powi(k as i32 - 1);
        let coef = if i == 0 || i == INNER {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += coef * f;
    }
    (k as f64 * acc * h / 3.0).clamp(0.0, 1.0)
}

/// One pairwise comparison of the multiple-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyComparison {
    pub group_a: String,
    pub group_b: String,
    /// mean(a) - mean(b).
    pub mean_diff: f64,
    pub q_statistic: f64,
    pub p_value: f64,
}

/// All pairwise comparisons of a one-way layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult {
    pub comparisons: Vec<TukeyComparison>,
    pub pooled_variance: f64,
    pub df: usize,
}

impl TukeyResult {
    /// Markdown table with one row per pair.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| group A | group B | mean diff | q | p |\n|---|---|---|---|---|\n");
        for c in &self.comparisons {
            out.push_str(&format!(
                "| {} | {} | {:.4} | {:.3} | {:.4} |\n",
                c.group_a, c.group_b, c.mean_diff, c.q_statistic, c.p_value
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
        for c in &self.comparisons {
            writer.serialize(c)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Tukey's honestly-significant-difference test over named groups.
///
/// Pooled within-group variance with N - k degrees of freedom; unequal group
/// sizes use the Tukey-Kramer standard error sqrt(s²/2 (1/ni + 1/nj)).
pub fn tukey_hsd(groups: &[(String, Vec<f64>)]) -> Result<TukeyResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "tukey needs at least 2 groups".into(),
        ));
    }
    for (name, values) in groups {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "tukey group '{name}' needs at least 2 values, got {}",
                values.len()
            )));
        }
    }
    let k = groups.len();
    let n_total: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let df = n_total - k;
    let means: Vec<f64> = groups
        .iter()
        .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|((_, v), m)| v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let pooled_variance = (ss_within / df as f64).max(VARIANCE_FLOOR);

    let mut comparisons = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let ni = groups[i].1.len() as f64;
            let nj = groups[j].1.len() as f64;
            let se = (pooled_variance / 2.0 * (1.0 / ni + 1.0 / nj)).sqrt();
            let mean_diff = means[i] - means[j];
            let q = mean_diff.abs() / se;
            let p = (1.0 - studentized_range_cdf(q, k, df as f64)).clamp(0.0, 1.0);
            comparisons.push(TukeyComparison {
                group_a: groups[i].0.clone(),
                group_b: groups[j].0.clone(),
                mean_diff,
                q_statistic: q,
                p_value: p,
            });
        }
    }
    Ok(TukeyResult {
        comparisons,
        pooled_variance,
        df,
    })
}
