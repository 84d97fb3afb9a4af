//! Command-line front end: phantom generation, training, the comparison
//! matrix, single-volume segmentation, evaluation, statistics, and static
//! figures.
//!
//! Exit codes: 0 on success, 2 for configuration/usage problems, 1 for
//! runtime failures. The results root defaults to the config document's
//! `paths.results` and can be overridden with the `VESSELSEG_RESULTS`
//! environment variable.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use vesselseg::dataset::{discover_cohort, subject_ids, Artery};
use vesselseg::experiment::{
    evaluate_prediction_dir, read_volume_rows, run_matrix, ArteryDataset, VolumeRow,
};
use vesselseg::infer::{save_segmentation, segment_volume, SegmentOptions, TrainedModel};
use vesselseg::metrics::{write_records_csv, Boundary};
use vesselseg::phantom::{generate_cohort, PhantomSpec};
use vesselseg::stats::{bland_altman, pearson, tukey_hsd, BlandAltman};
use vesselseg::trainer::{read_training_log, train, EpochLog, TrainConfig, TrainMode};
use vesselseg::volume::{load_volume, make_split};

/// Environment variable overriding the configured results root.
const RESULTS_ENV: &str = "VESSELSEG_RESULTS";

/// Complete description of a run. `config dump` prints it with every default
/// inlined, so a run is reproducible from the document alone. Unknown keys
/// are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    phantom: PhantomSpec,
    train: TrainConfig,
    /// Seed of the subject-level train/val/test split.
    split_seed: u64,
    paths: PathsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PathsConfig {
    /// Cohort of full-frame volumes.
    cca_dataset: PathBuf,
    /// Cohort of volumes with endpoint ROI annotations.
    ica_dataset: PathBuf,
    /// Results root; `VESSELSEG_RESULTS` overrides it.
    results: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            cca_dataset: "data/cca".into(),
            ica_dataset: "data/ica".into(),
            results: "results".into(),
        }
    }
}

/// Carotid vessel-wall segmentation laboratory.
#[derive(Parser)]
#[command(name = "vesselseg", version, about, propagate_version = true)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom cohort with exact reference labels.
    Phantom(PhantomArgs),
    /// Train one model on a labeled cohort.
    Train(TrainArgs),
    /// Run the nine-setting comparison matrix.
    Matrix(MatrixArgs),
    /// Segment one volume with a trained checkpoint.
    Segment(SegmentArgs),
    /// Compare predicted masks against a volume's reference labels.
    Evaluate(EvaluateArgs),
    /// Agreement and pairwise-comparison statistics over per-volume CSVs.
    Stats(StatsArgs),
    /// Static figures: correlation, agreement, and loss curves as SVG files.
    Plot(PlotArgs),
    /// Inspect the effective configuration.
    Config(ConfigArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Output cohort directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of volumes (two volumes per synthetic subject).
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Master seed for the cohort (default: the configured phantom seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Write endpoint ROI boxes for the cropped segmentation pathway.
    #[arg(long)]
    roi_boxes: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled cohort directory.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Output directory (default: `<results>/train_<mode>`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Loss regime override: sdl, ddl, tdl or atdl.
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Training seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Full-frame cohort root (default: the configured cca dataset, if present).
    #[arg(long, value_name = "DIR")]
    cca: Option<PathBuf>,
    /// ROI-annotated cohort root (default: the configured ica dataset, if present).
    #[arg(long, value_name = "DIR")]
    ica: Option<PathBuf>,
    /// Results root (default: the resolved results directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Checkpoint directory (two-channel, or mab/ + lib/ pair).
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Volume directory to segment.
    #[arg(long, value_name = "DIR")]
    volume: PathBuf,
    /// Output directory for predicted masks and provenance.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// cca segments the full frame; ica requires endpoint ROI annotations.
    #[arg(long)]
    artery: Artery,
    /// Flip-ensemble test-time augmentation.
    #[arg(long)]
    tta: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted masks (slice_XXXX_mab/lib.png).
    #[arg(long, value_name = "DIR")]
    predictions: PathBuf,
    /// Reference volume directory (holding labels/).
    #[arg(long, value_name = "DIR")]
    volume: PathBuf,
    /// Output CSV (default: `<predictions>/records.csv`).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Per-volume metric CSVs (volume,dsc_mab,dsc_lib,vwv_pred_mm3,vwv_true_mm3);
    /// each file forms one comparison group.
    #[arg(long = "volumes-csv", value_name = "FILE", required = true, num_args = 1..)]
    volumes_csv: Vec<PathBuf>,
    /// Group names matching the CSVs (default: parent directory names).
    #[arg(long, value_name = "NAME", num_args = 1..)]
    names: Option<Vec<String>>,
    /// Output directory (default: `<results>/stats`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Per-volume metric CSV feeding the correlation and agreement figures.
    #[arg(long = "volumes-csv", value_name = "FILE")]
    volumes_csv: Option<PathBuf>,
    /// Training log CSV feeding the loss-curve figure.
    #[arg(long = "training-log", value_name = "FILE")]
    training_log: Option<PathBuf>,
    /// Output directory (default: `<results>/figures`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(subcommand)]
    action: ConfigAction,
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the effective configuration with every default inlined.
    Dump {
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Failures split by exit code: configuration problems exit 2, everything
/// else exits 1.
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<vesselseg::Error> for CliError {
    fn from(e: vesselseg::Error) -> Self {
        match e {
            vesselseg::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Restore the default SIGPIPE disposition so piping into `head` ends the
/// process quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Phantom(args) => cmd_phantom(&config, args),
        Command::Train(args) => cmd_train(&config, args),
        Command::Matrix(args) => cmd_matrix(&config, args),
        Command::Segment(args) => cmd_segment(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Stats(args) => cmd_stats(&config, args),
        Command::Plot(args) => cmd_plot(&config, args),
        Command::Config(args) => cmd_config(&config, args),
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))
        }
    }
}

/// Results root: environment override first, then the config document.
fn results_root(config: &RunConfig) -> PathBuf {
    env::var_os(RESULTS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| config.paths.results.clone())
}

fn cmd_phantom(config: &RunConfig, args: PhantomArgs) -> CliResult {
    let mut spec = config.phantom;
    if args.roi_boxes {
        spec.roi_boxes = true;
    }
    let seed = args.seed.unwrap_or(spec.seed);
    let dirs = generate_cohort(&args.out, args.count, &spec, seed)?;
    println!(
        "generated {} volumes ({} subjects) under {}",
        dirs.len(),
        dirs.len().div_ceil(2),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig, args: TrainArgs) -> CliResult {
    let mut train_cfg = config.train.clone();
    if let Some(mode) = args.mode {
        train_cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    train_cfg.validate()?;
    let entries = discover_cohort(&args.dataset)?;
    let split = make_split(&subject_ids(&entries), config.split_seed)?;
    let out = args
        .out
        .unwrap_or_else(|| results_root(config).join(format!("train_{}", train_cfg.mode)));
    let report = train(&train_cfg, &args.dataset, &split, &out)?;
    println!(
        "trained {} for {} epochs: best val DSC {:.4} at epoch {}; final {:.4}",
        report.mode,
        report.logs.len(),
        report.best_val_dsc,
        report.best_epoch,
        report.final_val_dsc
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_matrix(config: &RunConfig, args: MatrixArgs) -> CliResult {
    let mut datasets = Vec::new();
    let mut add = |artery: Artery, flag: Option<PathBuf>, fallback: &Path| {
        if let Some(root) = flag {
            datasets.push(ArteryDataset { artery, root });
        } else if fallback.is_dir() {
            datasets.push(ArteryDataset {
                artery,
                root: fallback.to_path_buf(),
            });
        }
    };
    add(Artery::Cca, args.cca, &config.paths.cca_dataset);
    add(Artery::Ica, args.ica, &config.paths.ica_dataset);
    if datasets.is_empty() {
        return Err(CliError::Config(
            "no dataset roots: pass --cca/--ica or set paths.cca_dataset / paths.ica_dataset"
                .into(),
        ));
    }
    let out = args.out.unwrap_or_else(|| results_root(config));
    let summaries = run_matrix(&config.train, &datasets, config.split_seed, &out)?;
    for s in &summaries {
        println!(
            "{:<20} {}  MAB DSC {:.4} ± {:.4}  LIB DSC {:.4} ± {:.4}",
            s.setting, s.artery, s.mean_dsc_mab, s.sd_dsc_mab, s.mean_dsc_lib, s.sd_dsc_lib
        );
    }
    println!("summary tables in {}", out.display());
    Ok(())
}

fn model_input_size(model: &TrainedModel) -> (usize, usize) {
    match model {
        TrainedModel::TwoChannel(net) => net.config().input_size,
        TrainedModel::PerBoundary { mab, .. } => mab.config().input_size,
    }
}

fn cmd_segment(args: SegmentArgs) -> CliResult {
    let mut volume = load_volume(&args.volume)?;
    match args.artery {
        Artery::Ica => {
            if volume.roi_first.is_none() || volume.roi_last.is_none() {
                return Err(CliError::Runtime(format!(
                    "cannot segment {} as ica: the volume carries no endpoint ROI annotations \
                     (roi_first/roi_last in volume.json); annotate the first and last slice \
                     or segment as --artery cca",
                    args.volume.display()
                )));
            }
        }
        Artery::Cca => {
            volume.roi_first = None;
            volume.roi_last = None;
        }
    }
    let mut model = TrainedModel::load(&args.checkpoint)?;
    let options = SegmentOptions {
        tta: args.tta,
        input_size: model_input_size(&model),
        checkpoint_id: args.checkpoint.display().to_string(),
    };
    let result = segment_volume(&mut model, &volume, &options)?;
    save_segmentation(&args.out, &result)?;
    println!(
        "segmented {} slices ({}, tta {}) -> {}",
        result.record.n_slices,
        args.artery,
        args.tta,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let records = evaluate_prediction_dir(&args.predictions, &args.volume)?;
    let out = args
        .out
        .unwrap_or_else(|| args.predictions.join("records.csv"));
    write_records_csv(&out, &records)?;
    for boundary in [Boundary::Mab, Boundary::Lib] {
        let scores: Vec<f64> = records
            .iter()
            .filter(|r| r.boundary == boundary)
            .map(|r| r.dsc)
            .collect();
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        println!("{boundary} mean DSC {mean:.4} over {} slices", scores.len());
    }
    println!("wrote {} records -> {}", records.len(), out.display());
    Ok(())
}

/// One agreement row of the `stats` output: wall-volume correlation and
/// Bland-Altman limits for one group. Fields are empty when the group is too
/// small or degenerate for the statistic.
#[derive(Debug, Serialize, Deserialize)]
struct AgreementRow {
    group: String,
    n: usize,
    r: Option<f64>,
    p: Option<f64>,
    bias: Option<f64>,
    loa_low: Option<f64>,
    loa_high: Option<f64>,
}

fn group_name(path: &Path, index: usize) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("group_{index}"))
}

fn cmd_stats(config: &RunConfig, args: StatsArgs) -> CliResult {
    if let Some(names) = &args.names {
        if names.len() != args.volumes_csv.len() {
            return Err(CliError::Config(format!(
                "{} group names for {} CSV files",
                names.len(),
                args.volumes_csv.len()
            )));
        }
    }
    let out = args.out.unwrap_or_else(|| results_root(config).join("stats"));
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut groups: Vec<(String, Vec<VolumeRow>)> = Vec::new();
    for (i, path) in args.volumes_csv.iter().enumerate() {
        let name = match &args.names {
            Some(names) => names[i].clone(),
            None => group_name(path, i),
        };
        groups.push((name, read_volume_rows(path)?));
    }

    // Wall-volume agreement per group.
    let mut agreement = Vec::new();
    for (name, rows) in &groups {
        let preds: Vec<f64> = rows.iter().map(|r| r.vwv_pred_mm3).collect();
        let truths: Vec<f64> = rows.iter().map(|r| r.vwv_true_mm3).collect();
        let corr = pearson(&preds, &truths).ok();
        let limits: Option<BlandAltman> = bland_altman(&preds, &truths).ok();
        agreement.push(AgreementRow {
            group: name.clone(),
            n: rows.len(),
            r: corr.map(|(r, _)| r),
            p: corr.map(|(_, p)| p),
            bias: limits.as_ref().map(|l| l.bias),
            loa_low: limits.as_ref().map(|l| l.loa_low),
            loa_high: limits.as_ref().map(|l| l.loa_high),
        });
    }
    let agreement_path = out.join("agreement.csv");
    let mut writer = csv::Writer::from_path(&agreement_path)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in &agreement {
        writer
            .serialize(row)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    // Pairwise comparisons over per-volume DSC, when the groups allow them.
    let mut md = String::from("# Statistics\n\n## Wall volume agreement\n\n");
    md.push_str("| group | n | r | p | bias | limits of agreement |\n|---|---|---|---|---|---|\n");
    for row in &agreement {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let loa = match (row.loa_low, row.loa_high) {
            (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "n/a".to_string(),
        };
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            row.group,
            row.n,
            fmt(row.r),
            fmt(row.p),
            fmt(row.bias),
            loa
        ));
    }
    let tukey_possible =
        groups.len() >= 2 && groups.iter().all(|(_, rows)| rows.len() >= 2);
    if tukey_possible {
        for (boundary, pick) in [
            ("mab", &(|r: &VolumeRow| r.dsc_mab) as &dyn Fn(&VolumeRow) -> f64),
            ("lib", &(|r: &VolumeRow| r.dsc_lib)),
        ] {
            let samples: Vec<(String, Vec<f64>)> = groups
                .iter()
                .map(|(name, rows)| (name.clone(), rows.iter().map(|r| pick(r)).collect()))
                .collect();
            let tukey = tukey_hsd(&samples)?;
            tukey.write_csv(&out.join(format!("tukey_{boundary}.csv")))?;
            md.push_str(&format!(
                "\n## Pairwise comparisons — {} per-volume DSC\n\n",
                boundary.to_uppercase()
            ));
            md.push_str(&tukey.to_markdown());
        }
    } else {
        md.push_str("\nPairwise comparisons skipped: need at least two groups with two volumes each.\n");
    }
    let md_path = out.join("stats.md");
    fs::write(&md_path, md).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} and {} for {} groups",
        agreement_path.display(),
        md_path.display(),
        groups.len()
    );
    Ok(())
}

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("figure rendering failed: {e}"))
}

/// Padded min/max of a value list; degenerate extents get a unit margin.
fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-6).max((hi - lo + 1.0) * 0.01);
    (lo - pad, hi + pad)
}

fn plot_correlation(rows: &[VolumeRow], path: &Path) -> CliResult {
    use plotters::prelude::*;
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (lo, hi) = extent(
        rows.iter()
            .flat_map(|r| [r.vwv_pred_mm3, r.vwv_true_mm3]),
    );
    let mut chart = ChartBuilder::on(&root)
        .caption("Wall volume: predicted vs reference", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(lo..hi, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("reference VWV (mm^3)")
        .y_desc("predicted VWV (mm^3)")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new([(lo, lo), (hi, hi)], &BLACK.mix(0.4)))
        .map_err(plot_err)?;
    chart
        .draw_series(
            rows.iter()
                .map(|r| Circle::new((r.vwv_true_mm3, r.vwv_pred_mm3), 4, BLUE.filled())),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_bland_altman(rows: &[VolumeRow], path: &Path) -> CliResult {
    use plotters::prelude::*;
    let preds: Vec<f64> = rows.iter().map(|r| r.vwv_pred_mm3).collect();
    let truths: Vec<f64> = rows.iter().map(|r| r.vwv_true_mm3).collect();
    let limits = bland_altman(&preds, &truths).ok();
    let means: Vec<f64> = rows
        .iter()
        .map(|r| 0.5 * (r.vwv_pred_mm3 + r.vwv_true_mm3))
        .collect();
    let diffs: Vec<f64> = rows
        .iter()
        .map(|r| r.vwv_pred_mm3 - r.vwv_true_mm3)
        .collect();
    let (x_lo, x_hi) = extent(means.iter().copied());
    let mut y_values = diffs.clone();
    if let Some(l) = &limits {
        y_values.extend([l.loa_low, l.loa_high]);
    }
    let (y_lo, y_hi) = extent(y_values.iter().copied());

    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Wall volume agreement", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("mean of the pair (mm^3)")
        .y_desc("difference predicted - reference (mm^3)")
        .draw()
        .map_err(plot_err)?;
    if let Some(l) = &limits {
        for (level, shade) in [(l.bias, 0.8), (l.loa_low, 0.4), (l.loa_high, 0.4)] {
            chart
                .draw_series(LineSeries::new(
                    [(x_lo, level), (x_hi, level)],
                    &RED.mix(shade),
                ))
                .map_err(plot_err)?;
        }
    }
    chart
        .draw_series(
            means
                .iter()
                .zip(&diffs)
                .map(|(&m, &d)| Circle::new((m, d), 4, BLUE.filled())),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_loss_curves(logs: &[EpochLog], path: &Path) -> CliResult {
    use plotters::prelude::*;
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let max_epoch = logs.last().map_or(1.0, |l| l.epoch as f64).max(1.0);
    let y_hi = logs
        .iter()
        .flat_map(|l| [l.l_mab, l.l_lib, l.l_cvw, l.val_dsc])
        .fold(1.0f64, f64::max)
        * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training curves", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..max_epoch, 0.0..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("loss / validation DSC")
        .draw()
        .map_err(plot_err)?;
    let series: [(&str, &dyn Fn(&EpochLog) -> f64, RGBColor); 4] = [
        ("MAB loss", &|l| l.l_mab, RED),
        ("LIB loss", &|l| l.l_lib, BLUE),
        ("wall loss", &|l| l.l_cvw, GREEN),
        ("val DSC", &|l| l.val_dsc, BLACK),
    ];
    for (label, pick, color) in series {
        chart
            .draw_series(LineSeries::new(
                logs.iter().map(|l| (l.epoch as f64, pick(l))),
                &color,
            ))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn cmd_plot(config: &RunConfig, args: PlotArgs) -> CliResult {
    if args.volumes_csv.is_none() && args.training_log.is_none() {
        return Err(CliError::Config(
            "nothing to plot: pass --volumes-csv and/or --training-log".into(),
        ));
    }
    let out = args
        .out
        .unwrap_or_else(|| results_root(config).join("figures"));
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(path) = &args.volumes_csv {
        let rows = read_volume_rows(path)?;
        if rows.is_empty() {
            return Err(CliError::Runtime(format!(
                "{} holds no per-volume rows",
                path.display()
            )));
        }
        plot_correlation(&rows, &out.join("correlation.svg"))?;
        plot_bland_altman(&rows, &out.join("bland_altman.svg"))?;
        println!("wrote correlation.svg and bland_altman.svg");
    }
    if let Some(path) = &args.training_log {
        let logs = read_training_log(path)?;
        if logs.is_empty() {
            return Err(CliError::Runtime(format!(
                "{} holds no epochs",
                path.display()
            )));
        }
        plot_loss_curves(&logs, &out.join("loss_curves.svg"))?;
        println!("wrote loss_curves.svg");
    }
    println!("figures in {}", out.display());
    Ok(())
}

fn cmd_config(config: &RunConfig, args: ConfigArgs) -> CliResult {
    match args.action {
        ConfigAction::Dump { out } => {
            let json = serde_json::to_string_pretty(config)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            match out {
                None => println!("{json}"),
                Some(path) => {
                    fs::write(&path, json).map_err(|e| CliError::Runtime(e.to_string()))?;
                    println!("wrote {}", path.display());
                }
            }
        }
    }
    Ok(())
}
