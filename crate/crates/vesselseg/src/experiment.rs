//! The experiment matrix: one training per loss regime (plus an extra
//! adaptive run without reslice expansion), evaluation of every
//! regime-by-inference-variant setting on the held-out test subjects, and
//! emission of metric tables, wall-volume agreement statistics, and pairwise
//! significance comparisons.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    discover_cohort, entries_for, load_labeled, subject_ids, Artery, LoadedVolume,
};
use crate::error::{Error, Result};
use crate::infer::{boundary_mask, segment_volume, save_segmentation, SegmentOptions, TrainedModel};
use crate::metrics::{
    dsc, extract_contour, largest_component, mad_maxd, symmetric_correspondence, write_records_csv,
    Boundary, EvalRecord,
};
use crate::stats::{bland_altman, pearson, tukey_hsd, TukeyResult};
use crate::trainer::{train, TrainConfig, TrainMode, TrainReport};
use crate::volume::{make_split, DatasetSplit, LabelPair};
use crate::volumetry::vwv;

/// Filename of the combined matrix summary CSV at the results root.
pub const MATRIX_SUMMARY_CSV: &str = "matrix_summary.csv";
/// Filename of the combined Markdown report at the results root.
pub const MATRIX_SUMMARY_MD: &str = "matrix_summary.md";

/// One evaluation setting: a training regime, whether inference uses the
/// flip-ensemble vote, and whether training used reslice expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub mode: TrainMode,
    pub tta: bool,
    pub reslice: bool,
}

impl Setting {
    /// The full matrix: every regime with and without test-time
    /// augmentation (all trained with reslice expansion), plus the adaptive
    /// regime with test-time augmentation but no reslice expansion.
    pub const ALL: [Setting; 9] = [
        Setting { mode: TrainMode::SingleDice, tta: false, reslice: true },
        Setting { mode: TrainMode::SingleDice, tta: true, reslice: true },
        Setting { mode: TrainMode::DualDice, tta: false, reslice: true },
        Setting { mode: TrainMode::DualDice, tta: true, reslice: true },
        Setting { mode: TrainMode::TripleDice, tta: false, reslice: true },
        Setting { mode: TrainMode::TripleDice, tta: true, reslice: true },
        Setting { mode: TrainMode::AdaptiveTripleDice, tta: false, reslice: true },
        Setting { mode: TrainMode::AdaptiveTripleDice, tta: true, reslice: true },
        Setting { mode: TrainMode::AdaptiveTripleDice, tta: true, reslice: false },
    ];

    /// Directory-friendly name, e.g. `atdl_tta` or `atdl_tta_noreslice`.
    pub fn name(&self) -> String {
        let mut name = self.mode.short_name().to_string();
        if self.tta {
            name.push_str("_tta");
        }
        if !self.reslice {
            name.push_str("_noreslice");
        }
        name
    }

    /// Which training run this setting evaluates; settings differing only in
    /// test-time augmentation share one checkpoint.
    fn training_key(&self) -> (TrainMode, bool) {
        (self.mode, self.reslice)
    }
}

/// The five distinct training runs behind the nine settings.
fn training_keys() -> Vec<(TrainMode, bool)> {
    let mut keys = Vec::new();
    for setting in Setting::ALL {
        let key = setting.training_key();
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys
}

fn training_dir_name(key: (TrainMode, bool)) -> String {
    if key.1 {
        key.0.short_name().to_string()
    } else {
        format!("{}_noreslice", key.0.short_name())
    }
}

/// Where one artery's labeled volumes live.
#[derive(Debug, Clone)]
pub struct ArteryDataset {
    pub artery: Artery,
    pub root: PathBuf,
}

/// Aggregate results of one setting on one artery's test partition.
/// Distance and agreement fields are absent when no slice or too few
/// volumes support them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: String,
    pub artery: Artery,
    pub mode: TrainMode,
    pub tta: bool,
    pub reslice: bool,
    pub mean_dsc_mab: f64,
    pub sd_dsc_mab: f64,
    pub mean_dsc_lib: f64,
    pub sd_dsc_lib: f64,
    pub mean_mad_mab: Option<f64>,
    pub mean_mad_lib: Option<f64>,
    pub mean_maxd_mab: Option<f64>,
    pub mean_maxd_lib: Option<f64>,
    pub vwv_pearson_r: Option<f64>,
    pub vwv_pearson_p: Option<f64>,
    pub vwv_bias: Option<f64>,
    pub vwv_loa_low: Option<f64>,
    pub vwv_loa_high: Option<f64>,
    pub n_test_volumes: usize,
    pub n_slices: usize,
}

/// Per-volume evaluation row written next to the per-slice records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub volume: String,
    pub dsc_mab: f64,
    pub dsc_lib: f64,
    pub vwv_pred_mm3: f64,
    pub vwv_true_mm3: f64,
}

/// Builds per-slice records comparing predicted against reference masks.
/// Slices where either mask yields no single closed boundary keep their DSC
/// but drop the distance metrics.
pub fn evaluate_labels(
    volume_name: &str,
    predicted: &[LabelPair],
    truth: &[LabelPair],
    spacing: (f64, f64),
) -> Vec<EvalRecord> {
    let mut records = Vec::with_capacity(predicted.len() * 2);
    for (pred, gt) in predicted.iter().zip(truth) {
        for boundary in [Boundary::Mab, Boundary::Lib] {
            let p = boundary_mask(pred, boundary);
            let t = boundary_mask(gt, boundary);
            let distances = distance_metrics(p, t, spacing);
            records.push(EvalRecord {
                volume: volume_name.to_string(),
                slice_index: gt.slice_index,
                boundary,
                dsc: dsc(p, t),
                mad: distances.map(|d| d.0),
                maxd: distances.map(|d| d.1),
            });
        }
    }
    records
}

/// (MAD, MAXD) between the main predicted component's contour and the
/// reference contour, or `None` when either contour cannot be extracted.
fn distance_metrics(pred: &Mask, truth: &Mask, spacing: (f64, f64)) -> Option<(f64, f64)> {
    let (main, _) = largest_component(pred)?;
    let c_pred = extract_contour(&main, spacing).ok()?;
    let c_true = extract_contour(truth, spacing).ok()?;
    let pairs = symmetric_correspondence(&c_true, &c_pred).ok()?;
    mad_maxd(&pairs).ok()
}

use crate::resample::Mask;

struct VolumeEval {
    row: VolumeRow,
    records: Vec<EvalRecord>,
}

fn evaluate_volume(
    model: &mut TrainedModel,
    lv: &LoadedVolume,
    options: &SegmentOptions,
    save_dir: Option<&Path>,
) -> Result<VolumeEval> {
    let result = segment_volume(model, &lv.volume, options)?;
    let spacing = lv.volume.in_plane_spacing;
    let records = evaluate_labels(&lv.name, &result.labels, &lv.labels, spacing);
    let mean_dsc = |boundary: Boundary| {
        let scores: Vec<f64> = records
            .iter()
            .filter(|r| r.boundary == boundary)
            .map(|r| r.dsc)
            .collect();
        scores.iter().sum::<f64>() / scores.len().max(1) as f64
    };
    let row = VolumeRow {
        volume: lv.name.clone(),
        dsc_mab: mean_dsc(Boundary::Mab),
        dsc_lib: mean_dsc(Boundary::Lib),
        vwv_pred_mm3: vwv(&result.labels, spacing, lv.volume.slice_spacing)?,
        vwv_true_mm3: vwv(&lv.labels, spacing, lv.volume.slice_spacing)?,
    };
    if let Some(dir) = save_dir {
        save_segmentation(dir, &result)?;
    }
    Ok(VolumeEval { row, records })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(mean(&present))
    }
}

fn summarize_setting(
    setting: Setting,
    artery: Artery,
    records: &[EvalRecord],
    rows: &[VolumeRow],
) -> SettingSummary {
    let per_boundary = |boundary: Boundary| -> Vec<&EvalRecord> {
        records.iter().filter(|r| r.boundary == boundary).collect()
    };
    let mab = per_boundary(Boundary::Mab);
    let lib = per_boundary(Boundary::Lib);
    let dscs = |rs: &[&EvalRecord]| rs.iter().map(|r| r.dsc).collect::<Vec<f64>>();
    let dsc_mab = dscs(&mab);
    let dsc_lib = dscs(&lib);

    let preds: Vec<f64> = rows.iter().map(|r| r.vwv_pred_mm3).collect();
    let truths: Vec<f64> = rows.iter().map(|r| r.vwv_true_mm3).collect();
    let agreement = pearson(&preds, &truths).ok();
    let limits = bland_altman(&preds, &truths).ok();

    SettingSummary {
        setting: setting.name(),
        artery,
        mode: setting.mode,
        tta: setting.tta,
        reslice: setting.reslice,
        mean_dsc_mab: mean(&dsc_mab),
        sd_dsc_mab: sample_sd(&dsc_mab),
        mean_dsc_lib: mean(&dsc_lib),
        sd_dsc_lib: sample_sd(&dsc_lib),
        mean_mad_mab: mean_present(mab.iter().map(|r| r.mad)),
        mean_mad_lib: mean_present(lib.iter().map(|r| r.mad)),
        mean_maxd_mab: mean_present(mab.iter().map(|r| r.maxd)),
        mean_maxd_lib: mean_present(lib.iter().map(|r| r.maxd)),
        vwv_pearson_r: agreement.map(|(r, _)| r),
        vwv_pearson_p: agreement.map(|(_, p)| p),
        vwv_bias: limits.as_ref().map(|l| l.bias),
        vwv_loa_low: limits.as_ref().map(|l| l.loa_low),
        vwv_loa_high: limits.as_ref().map(|l| l.loa_high),
        n_test_volumes: rows.len(),
        n_slices: mab.len(),
    }
}

fn write_volume_rows(path: &Path, rows: &[VolumeRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads per-volume evaluation rows back.
pub fn read_volume_rows(path: &Path) -> Result<Vec<VolumeRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Compares a directory of predicted masks (the segmentation output
/// convention) against a labeled volume directory.
pub fn evaluate_prediction_dir(pred_dir: &Path, volume_dir: &Path) -> Result<Vec<EvalRecord>> {
    let lv = load_labeled(volume_dir)?;
    let predicted = crate::volume::load_labels(pred_dir, lv.volume.n_slices())?;
    Ok(evaluate_labels(
        &lv.name,
        &predicted,
        &lv.labels,
        lv.volume.in_plane_spacing,
    ))
}

/// Everything run_matrix produced for one artery.
struct ArteryOutcome {
    artery: Artery,
    summaries: Vec<SettingSummary>,
    tukey: Vec<(Boundary, TukeyResult)>,
    split: DatasetSplit,
}

fn fmt_opt(value: Option<f64>, digits: usize) -> String {
    match value {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".to_string(),
    }
}

fn render_markdown(outcomes: &[ArteryOutcome]) -> String {
    let mut md = String::from("# Experiment matrix summary\n");
    for outcome in outcomes {
        let artery = outcome.artery;
        md.push_str(&format!(
            "\n## {artery} — test partition: subjects {:?}\n",
            outcome.split.test_ids
        ));
        md.push_str(
            "\n| setting | MAB DSC | LIB DSC | MAB MAD (mm) | LIB MAD (mm) | MAB MAXD (mm) | LIB MAXD (mm) |\n\
             |---|---|---|---|---|---|---|\n",
        );
        for s in &outcome.summaries {
            md.push_str(&format!(
                "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} | {} | {} | {} |\n",
                s.setting,
                s.mean_dsc_mab,
                s.sd_dsc_mab,
                s.mean_dsc_lib,
                s.sd_dsc_lib,
                fmt_opt(s.mean_mad_mab, 3),
                fmt_opt(s.mean_mad_lib, 3),
                fmt_opt(s.mean_maxd_mab, 3),
                fmt_opt(s.mean_maxd_lib, 3),
            ));
        }
        md.push_str(&format!(
            "\n### {artery} — wall volume agreement (predicted vs reference)\n\n\
             | setting | r | p | bias (mm³) | limits of agreement (mm³) |\n|---|---|---|---|---|\n"
        ));
        for s in &outcome.summaries {
            let loa = match (s.vwv_loa_low, s.vwv_loa_high) {
                (Some(lo), Some(hi)) => format!("[{lo:.3}, {hi:.3}]"),
                _ => "n/a".to_string(),
            };
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                s.setting,
                fmt_opt(s.vwv_pearson_r, 4),
                fmt_opt(s.vwv_pearson_p, 4),
                fmt_opt(s.vwv_bias, 3),
                loa,
            ));
        }
        for (boundary, tukey) in &outcome.tukey {
            md.push_str(&format!(
                "\n### {artery} — pairwise setting comparisons, {boundary} per-volume mean DSC\n\n"
            ));
            md.push_str(&tukey.to_markdown());
        }
    }
    md
}

/// Runs the full nine-setting matrix for every artery dataset: five
/// trainings per artery (test-time augmentation variants share their
/// checkpoint), evaluation of all settings on the test subjects, and the
/// summary artifacts.
///
/// Output layout under `out_root`:
/// - `<artery>/train/<regime>/` — training logs, reports, checkpoints;
/// - `results/<setting>/<artery>/` — per-slice `records.csv`, per-volume
///   `volumes.csv`, `summary.json`, and predicted masks per volume;
/// - `<artery>/stats/tukey_<boundary>.csv` — pairwise comparisons;
/// - `matrix_summary.csv` and `matrix_summary.md` at the root.
///
/// Every training shares `base`'s seed, so data order is identical across
/// regimes that share a pool; the split is derived from `split_seed`.
pub fn run_matrix(
    base: &TrainConfig,
    datasets: &[ArteryDataset],
    split_seed: u64,
    out_root: &Path,
) -> Result<Vec<SettingSummary>> {
    base.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidArgument(
            "the matrix needs at least one artery dataset".into(),
        ));
    }
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;

    let mut outcomes = Vec::new();
    for dataset in datasets {
        let artery_dir = out_root.join(dataset.artery.dir_name());
        let entries = discover_cohort(&dataset.root)?;
        let split = make_split(&subject_ids(&entries), split_seed)?;
        fs::create_dir_all(&artery_dir).map_err(|e| Error::io(&artery_dir, e))?;
        let split_path = artery_dir.join("split.json");
        fs::write(&split_path, serde_json::to_string_pretty(&split)?)
            .map_err(|e| Error::io(&split_path, e))?;

        // One training per distinct (regime, reslice) pair.
        let mut reports: HashMap<(TrainMode, bool), TrainReport> = HashMap::new();
        for key in training_keys() {
            let config = TrainConfig {
                mode: key.0,
                use_reslice_augment: key.1,
                ..base.clone()
            };
            let train_dir = artery_dir.join("train").join(training_dir_name(key));
            let report = train(&config, &dataset.root, &split, &train_dir)?;
            reports.insert(key, report);
        }

        let test_entries = entries_for(&entries, &split.test_ids);
        if test_entries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}: test partition is empty",
                dataset.artery
            )));
        }
        let test_volumes: Vec<LoadedVolume> = test_entries
            .iter()
            .map(|e| load_labeled(&e.dir))
            .collect::<Result<_>>()?;

        let mut summaries = Vec::new();
        let mut volume_scores: HashMap<(Boundary, String), Vec<f64>> = HashMap::new();
        for setting in Setting::ALL {
            let report = &reports[&setting.training_key()];
            let mut model = TrainedModel::load(&report.checkpoint_dir)?;
            let options = SegmentOptions {
                tta: setting.tta,
                input_size: base.net.input_size,
                checkpoint_id: format!("{}/{}", dataset.artery, training_dir_name(setting.training_key())),
            };
            let setting_dir = out_root
                .join("results")
                .join(setting.name())
                .join(dataset.artery.dir_name());
            fs::create_dir_all(&setting_dir).map_err(|e| Error::io(&setting_dir, e))?;

            let mut records = Vec::new();
            let mut rows = Vec::new();
            for lv in &test_volumes {
                let eval = evaluate_volume(
                    &mut model,
                    lv,
                    &options,
                    Some(&setting_dir.join(&lv.name)),
                )?;
                volume_scores
                    .entry((Boundary::Mab, setting.name()))
                    .or_default()
                    .push(eval.row.dsc_mab);
                volume_scores
                    .entry((Boundary::Lib, setting.name()))
                    .or_default()
                    .push(eval.row.dsc_lib);
                records.extend(eval.records);
                rows.push(eval.row);
            }
            write_records_csv(&setting_dir.join("records.csv"), &records)?;
            write_volume_rows(&setting_dir.join("volumes.csv"), &rows)?;
            let summary = summarize_setting(setting, dataset.artery, &records, &rows);
            let summary_path = setting_dir.join("summary.json");
            fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
                .map_err(|e| Error::io(&summary_path, e))?;
            summaries.push(summary);
        }

        // Pairwise comparisons over per-volume mean DSC, one per boundary.
        let stats_dir = artery_dir.join("stats");
        fs::create_dir_all(&stats_dir).map_err(|e| Error::io(&stats_dir, e))?;
        let mut tukey_results = Vec::new();
        for boundary in [Boundary::Mab, Boundary::Lib] {
            let groups: Vec<(String, Vec<f64>)> = Setting::ALL
                .iter()
                .map(|s| {
                    (
                        s.name(),
                        volume_scores[&(boundary, s.name())].clone(),
                    )
                })
                .collect();
            let tukey = tukey_hsd(&groups)?;
            tukey.write_csv(&stats_dir.join(format!(
                "tukey_{}.csv",
                boundary.to_string().to_lowercase()
            )))?;
            tukey_results.push((boundary, tukey));
        }

        outcomes.push(ArteryOutcome {
            artery: dataset.artery,
            summaries,
            tukey: tukey_results,
            split,
        });
    }

    let all_summaries: Vec<SettingSummary> = outcomes
        .iter()
        .flat_map(|o| o.summaries.iter().cloned())
        .collect();
    let csv_path = out_root.join(MATRIX_SUMMARY_CSV);
    let mut writer = csv::Writer::from_path(&csv_path).map_err(Error::from)?;
    for summary in &all_summaries {
        writer.serialize(summary)?;
    }
    writer.flush().map_err(|e| Error::io(&csv_path, e))?;
    let md_path = out_root.join(MATRIX_SUMMARY_MD);
    fs::write(&md_path, render_markdown(&outcomes)).map_err(|e| Error::io(&md_path, e))?;
    Ok(all_summaries)
}

/// Reads the combined matrix summary back.
pub fn read_matrix_summary(out_root: &Path) -> Result<Vec<SettingSummary>> {
    let path = out_root.join(MATRIX_SUMMARY_CSV);
    let mut reader = csv::Reader::from_path(&path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
