//! The training loop: Adam optimization under any of the four loss regimes,
//! per-epoch logging, validation scoring, and best-validation checkpointing.
//!
//! One call to [`train`] produces a checkpoint directory loadable by
//! [`TrainedModel::load`], a CSV training log, and a JSON report. The data
//! order and augmentation draws depend only on the seeds, never on the loss
//! regime, so runs that differ only in `mode` see identical batches.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, AugmentPolicy};
use crate::dataset::{
    batch_inputs, batch_targets, batch_targets_single, build_pool, discover_cohort, entries_for,
    load_labeled, CohortEntry, LoadedVolume, PoolOptions, Sample, SlicePool,
};
use crate::error::{Error, Result};
use crate::infer::{binarize, clip_to_outer, TrainedModel, BINARY_THRESHOLD};
use crate::loss::{single_batch_loss, BatchLoss, LossMode, Objective};
use crate::metrics::{dsc, Boundary};
use crate::net::{Adam, AdamConfig, NetConfig, UNet};
use crate::volume::{DatasetSplit, LabelPair};

/// Filename of the per-epoch CSV log inside a training output directory.
pub const TRAIN_LOG_FILE: &str = "training_log.csv";
/// Filename of the JSON training report.
pub const REPORT_FILE: &str = "report.json";
/// Checkpoint subdirectory name.
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Upper bound on slices per evaluation-mode forward pass.
const MAX_EVAL_BATCH: usize = 12;

/// Training regimes. `SingleDice` trains two independent one-channel
/// networks (one per boundary); the other regimes train one two-channel
/// network under increasingly structured Dice objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Plain Dice, one dedicated network per boundary.
    SingleDice,
    /// Equal-weight MAB and LIB Dice terms.
    DualDice,
    /// Equal-weight MAB, LIB and derived wall-channel terms.
    TripleDice,
    /// Triple loss whose weights adapt to the running boundary losses after
    /// a uniform warmup covering the first half of training.
    AdaptiveTripleDice,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::SingleDice,
        TrainMode::DualDice,
        TrainMode::TripleDice,
        TrainMode::AdaptiveTripleDice,
    ];

    /// Short name used in result directory layouts and tables.
    pub fn short_name(&self) -> &'static str {
        match self {
            TrainMode::SingleDice => "sdl",
            TrainMode::DualDice => "ddl",
            TrainMode::TripleDice => "tdl",
            TrainMode::AdaptiveTripleDice => "atdl",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdl" => Ok(TrainMode::SingleDice),
            "ddl" => Ok(TrainMode::DualDice),
            "tdl" => Ok(TrainMode::TripleDice),
            "atdl" => Ok(TrainMode::AdaptiveTripleDice),
            other => Err(Error::Config(format!(
                "unknown training mode '{other}', expected one of sdl, ddl, tdl, atdl"
            ))),
        }
    }
}

/// Everything one training run needs besides the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Steepness of the adaptive weight formula.
    pub adaptive_a: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Governs weight initialization, data order and subsampling.
    pub seed: u64,
    /// Expand the training pool by reslicing volumes before sampling.
    pub use_reslice_augment: bool,
    /// Target spacing of the resliced pool in mm.
    pub reslice_spacing_mm: f64,
    /// Per-epoch sample budget once reslicing inflates the pool; an epoch
    /// then visits a fresh random subsample of this size.
    pub epoch_sample_cap: usize,
    pub augment_policy: AugmentPolicy,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::AdaptiveTripleDice,
            adaptive_a: 0.5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            use_reslice_augment: true,
            reslice_spacing_mm: 0.1,
            epoch_sample_cap: 256,
            augment_policy: AugmentPolicy::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.augment_policy.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.mode == TrainMode::AdaptiveTripleDice && self.epochs < 2 {
            return Err(Error::Config(
                "adaptive training needs at least 2 epochs: a uniform warmup \
                 phase and an adaptive phase"
                    .into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.adaptive_a < 0.0 {
            return Err(Error::Config("adaptive_a must be non-negative".into()));
        }
        if self.reslice_spacing_mm <= 0.0 {
            return Err(Error::Config("reslice_spacing_mm must be positive".into()));
        }
        if self.epoch_sample_cap == 0 {
            return Err(Error::Config("epoch_sample_cap must be at least 1".into()));
        }
        if self.net.in_channels != 1 || self.net.out_channels != 2 {
            return Err(Error::Config(
                "training expects a 1-in/2-out network configuration; the \
                 single-boundary regime derives its 1-out networks internally"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Epoch mean of the MAB Dice loss (batch means averaged over batches).
    pub l_mab: f64,
    pub l_lib: f64,
    pub l_cvw: f64,
    /// Epoch mean loss weights; zeros in the single-boundary regime, where
    /// no weighting combines the two networks.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Mean over validation slices of the two boundary Dice scores.
    pub val_dsc: f64,
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub final_val_dsc: f64,
    pub checkpoint_dir: PathBuf,
    /// Trainable scalars plus normalization statistics over all networks.
    pub scalar_count: usize,
    /// Samples visited per epoch after pool subsampling.
    pub epoch_samples: usize,
    pub train_volumes: Vec<String>,
    pub val_volumes: Vec<String>,
}

/// Sums of per-batch loss reports, averaged into one log row per epoch.
#[derive(Default)]
struct EpochAccumulator {
    batches: usize,
    total: f64,
    l_mab: f64,
    l_lib: f64,
    l_cvw: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl EpochAccumulator {
    fn add(&mut self, batch: &BatchLoss<f32>) {
        self.batches += 1;
        self.total += batch.total;
        self.l_mab += batch.l_mab;
        self.l_lib += batch.l_lib;
        self.l_cvw += batch.l_cvw;
        self.alpha += batch.weights.alpha;
        self.beta += batch.weights.beta;
        self.gamma += batch.weights.gamma;
    }

    /// For the single-boundary regime: one batch seen by both networks.
    /// The combined scalar is the mean of the two plain Dice losses; the
    /// weight columns stay zero because nothing combines the networks.
    fn add_pair(&mut self, mab: &BatchLoss<f32>, lib: &BatchLoss<f32>) {
        self.batches += 1;
        self.total += 0.5 * (mab.total + lib.total);
        self.l_mab += mab.l_mab;
        self.l_lib += lib.l_lib;
    }

    fn into_log(self, epoch: usize, val_dsc: f64) -> EpochLog {
        let n = self.batches.max(1) as f64;
        EpochLog {
            epoch,
            l_mab: self.l_mab / n,
            l_lib: self.l_lib / n,
            l_cvw: self.l_cvw / n,
            alpha: self.alpha / n,
            beta: self.beta / n,
            gamma: self.gamma / n,
            val_dsc,
        }
    }
}

fn build_model(config: &TrainConfig) -> Result<TrainedModel> {
    match config.mode {
        TrainMode::SingleDice => {
            let net_cfg = NetConfig {
                out_channels: 1,
                ..config.net.clone()
            };
            let mab = UNet::new(net_cfg.clone(), config.seed)?;
            let lib = UNet::new(net_cfg, config.seed.wrapping_add(1))?;
            Ok(TrainedModel::PerBoundary { mab, lib })
        }
        _ => Ok(TrainedModel::TwoChannel(UNet::new(
            config.net.clone(),
            config.seed,
        )?)),
    }
}

fn two_channel_objective(config: &TrainConfig) -> Objective {
    let mode = match config.mode {
        TrainMode::DualDice => LossMode::Dual,
        TrainMode::TripleDice => LossMode::Triple,
        TrainMode::AdaptiveTripleDice => LossMode::AdaptiveTriple,
        TrainMode::SingleDice => unreachable!("single-boundary regime is dispatched separately"),
    };
    Objective::new(mode, config.adaptive_a)
}

fn model_scalar_count(model: &mut TrainedModel) -> usize {
    match model {
        TrainedModel::TwoChannel(net) => net.scalar_count(),
        TrainedModel::PerBoundary { mab, lib } => mab.scalar_count() + lib.scalar_count(),
    }
}

fn save_model_checkpoint(
    model: &mut TrainedModel,
    dir: &Path,
    epoch: usize,
    loss_history: &[f64],
    val_history: &[f64],
) -> Result<()> {
    match model {
        TrainedModel::TwoChannel(net) => {
            net.save_checkpoint(dir, epoch, loss_history, val_history)?;
        }
        TrainedModel::PerBoundary { mab, lib } => {
            mab.save_checkpoint(&dir.join("mab"), epoch, loss_history, val_history)?;
            lib.save_checkpoint(&dir.join("lib"), epoch, loss_history, val_history)?;
        }
    }
    Ok(())
}

/// Mean over a pool of the per-slice average of both boundary Dice scores,
/// with predictions binarized and nested exactly as at inference time.
fn validation_dsc(model: &mut TrainedModel, pool: &SlicePool) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in pool.samples.chunks(MAX_EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = batch_inputs(&refs)?;
        let probs = model.predict_batch(&x)?;
        for (sample, (pm, pl)) in chunk.iter().zip(&probs) {
            let mab = binarize(pm, BINARY_THRESHOLD);
            let mut lib = binarize(pl, BINARY_THRESHOLD);
            clip_to_outer(&mab, &mut lib);
            sum += 0.5 * (dsc(&mab, &sample.mab) + dsc(&lib, &sample.lib));
        }
    }
    Ok(sum / pool.len() as f64)
}

fn load_partition(entries: &[&CohortEntry]) -> Result<Vec<LoadedVolume>> {
    entries.iter().map(|e| load_labeled(&e.dir)).collect()
}

/// Applies one random augmentation draw to a pooled sample.
fn augment_pooled(sample: &Sample, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Sample {
    let pair = LabelPair {
        mab_mask: sample.mab.clone(),
        lib_mask: sample.lib.clone(),
        slice_index: 0,
    };
    let (image, pair) = augment_sample(&sample.image, &pair, policy, rng);
    Sample {
        image,
        mab: pair.mab_mask,
        lib: pair.lib_mask,
    }
}

/// Trains one model on the subjects listed in `split`, writing into `out_dir`
/// a `checkpoint/` directory (the weights of the best-validation epoch, in a
/// layout [`TrainedModel::load`] accepts), a `training_log.csv`, and a
/// `report.json`.
///
/// Dataset layout: `dataset_root` holds volume directories as produced by the
/// phantom generator or any source following the same sidecar convention.
/// Training uses the split's train subjects; validation its val subjects.
pub fn train(
    config: &TrainConfig,
    dataset_root: &Path,
    split: &DatasetSplit,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    let entries = discover_cohort(dataset_root)?;
    let train_entries = entries_for(&entries, &split.train_ids);
    let val_entries = entries_for(&entries, &split.val_ids);
    if train_entries.is_empty() {
        return Err(Error::InvalidArgument(
            "training partition is empty; no volume belongs to a train subject".into(),
        ));
    }
    if val_entries.is_empty() {
        return Err(Error::InvalidArgument(
            "validation partition is empty; checkpoint selection needs validation volumes".into(),
        ));
    }

    let train_volumes = load_partition(&train_entries)?;
    let val_volumes = load_partition(&val_entries)?;
    let train_pool = build_pool(
        &train_volumes,
        &PoolOptions {
            input_size: config.net.input_size,
            reslice_spacing_mm: config
                .use_reslice_augment
                .then_some(config.reslice_spacing_mm),
        },
    )?;
    let val_pool = build_pool(
        &val_volumes,
        &PoolOptions {
            input_size: config.net.input_size,
            reslice_spacing_mm: None,
        },
    )?;

    let mut model = build_model(config)?;
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        ..AdamConfig::default()
    };
    let mut optimizers: Vec<Adam<f32>> = match config.mode {
        TrainMode::SingleDice => vec![Adam::new(adam_config), Adam::new(adam_config)],
        _ => vec![Adam::new(adam_config)],
    };

    let epoch_samples = if config.use_reslice_augment {
        train_pool.len().min(config.epoch_sample_cap)
    } else {
        train_pool.len()
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint_dir = out_dir.join(CHECKPOINT_DIR);
    let mut logs: Vec<EpochLog> = Vec::with_capacity(config.epochs);
    let mut loss_history: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut val_history: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize)> = None;

    for epoch in 0..config.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        order_rng.set_stream(epoch as u64);
        let mut aug_rng =
            ChaCha8Rng::seed_from_u64(config.augment_policy.seed.wrapping_add(config.seed));
        aug_rng.set_stream(epoch as u64);

        let mut order: Vec<usize> = (0..train_pool.len()).collect();
        order.shuffle(&mut order_rng);
        order.truncate(epoch_samples);

        let mut acc = EpochAccumulator::default();
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&i| augment_pooled(&train_pool.samples[i], &config.augment_policy, &mut aug_rng))
                .collect();
            let refs: Vec<&Sample> = samples.iter().collect();
            let x = batch_inputs(&refs)?;
            match &mut model {
                TrainedModel::TwoChannel(net) => {
                    let targets = batch_targets(&refs)?;
                    let prob = net.forward(&x, true)?;
                    let batch =
                        two_channel_objective(config).evaluate(&prob, &targets, epoch, config.epochs)?;
                    net.zero_grads();
                    net.backward(&batch.grad);
                    optimizers[0].step(net.params_and_grads());
                    acc.add(&batch);
                }
                TrainedModel::PerBoundary { mab, lib } => {
                    let t_mab = batch_targets_single(&refs, Boundary::Mab)?;
                    let p_mab = mab.forward(&x, true)?;
                    let b_mab = single_batch_loss(&p_mab, &t_mab, Boundary::Mab)?;
                    mab.zero_grads();
                    mab.backward(&b_mab.grad);
                    optimizers[0].step(mab.params_and_grads());

                    let t_lib = batch_targets_single(&refs, Boundary::Lib)?;
                    let p_lib = lib.forward(&x, true)?;
                    let b_lib = single_batch_loss(&p_lib, &t_lib, Boundary::Lib)?;
                    lib.zero_grads();
                    lib.backward(&b_lib.grad);
                    optimizers[1].step(lib.params_and_grads());

                    acc.add_pair(&b_mab, &b_lib);
                }
            }
        }

        loss_history.push(acc.total / acc.batches.max(1) as f64);
        let val_dsc = validation_dsc(&mut model, &val_pool)?;
        val_history.push(val_dsc);
        logs.push(acc.into_log(epoch, val_dsc));

        if best.is_none_or(|(b, _)| val_dsc > b) {
            best = Some((val_dsc, epoch));
            save_model_checkpoint(&mut model, &checkpoint_dir, epoch, &loss_history, &val_history)?;
        }
    }

    let (best_val_dsc, best_epoch) = best.expect("at least one epoch ran");
    let report = TrainReport {
        mode: config.mode,
        best_epoch,
        best_val_dsc,
        final_val_dsc: *val_history.last().expect("at least one epoch ran"),
        checkpoint_dir: checkpoint_dir.clone(),
        scalar_count: model_scalar_count(&mut model),
        epoch_samples,
        train_volumes: train_entries.iter().map(|e| e.name.clone()).collect(),
        val_volumes: val_entries.iter().map(|e| e.name.clone()).collect(),
        logs,
    };
    write_training_log(&out_dir.join(TRAIN_LOG_FILE), &report.logs)?;
    let report_path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

/// Writes log rows as CSV with one header line.
pub fn write_training_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    for row in logs {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a training log CSV back.
pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Reads a training report back.
pub fn read_report(out_dir: &Path) -> Result<TrainReport> {
    let path = out_dir.join(REPORT_FILE);
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_cohort, PhantomSpec};
    use tempfile::tempdir;

    /// Easy phantoms: low speckle, no shadows, mild geometry variation.
    fn easy_spec() -> PhantomSpec {
        PhantomSpec {
            n_slices: 4,
            image_size: (32, 32),
            centerline_drift_amplitude: 1.0,
            mab_radius_range: (6.0, 8.0),
            wall_thickness_range: (2.5, 3.5),
            ellipticity_range: (0.95, 1.05),
            speckle_strength: 0.1,
            shadow_probability: 0.0,
            roi_boxes: false,
            ..PhantomSpec::default()
        }
    }

    fn tiny_config(mode: TrainMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            mode,
            epochs,
            batch_size: 4,
            seed: 11,
            use_reslice_augment: false,
            augment_policy: AugmentPolicy::disabled(),
            net: NetConfig {
                input_size: (32, 32),
                depth: 2,
                base_channels: 8,
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    /// 8 volumes = 4 subjects; splitting by hand keeps the run tiny.
    fn tiny_dataset() -> (tempfile::TempDir, DatasetSplit) {
        let dir = tempdir().unwrap();
        generate_cohort(dir.path(), 8, &easy_spec(), 5).unwrap();
        let split = DatasetSplit {
            train_ids: vec![
                "subject_000".into(),
                "subject_001".into(),
                "subject_002".into(),
            ],
            val_ids: vec!["subject_003".into()],
            test_ids: vec![],
        };
        (dir, split)
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 1,
            mode: TrainMode::AdaptiveTripleDice,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            net: NetConfig {
                out_channels: 3,
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        // The config document rejects unknown keys.
        let err = serde_json::from_str::<TrainConfig>("{\"learning_rat\": 0.1}");
        assert!(err.is_err());
        // Defaults: Adam schedule and batch geometry.
        let d = TrainConfig::default();
        assert_eq!(
            (d.learning_rate, d.beta1, d.beta2, d.batch_size, d.epochs),
            (1e-3, 0.9, 0.999, 8, 50)
        );
        assert_eq!(d.adaptive_a, 0.5);
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in TrainMode::ALL {
            let parsed: TrainMode = mode.short_name().parse().unwrap();
            assert_eq!(parsed, mode);
        }
        assert!("xdl".parse::<TrainMode>().is_err());
    }

    #[test]
    fn tiny_triple_run_reduces_loss_and_logs_uniform_weights() {
        let (data, split) = tiny_dataset();
        let out = tempdir().unwrap();
        let config = tiny_config(TrainMode::TripleDice, 5);
        let report = train(&config, data.path(), &split, out.path()).unwrap();

        assert_eq!(report.logs.len(), 5);
        let losses: Vec<f64> = report
            .logs
            .iter()
            .map(|l| (l.l_mab + l.l_lib + l.l_cvw) / 3.0)
            .collect();
        let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(drops >= 3, "loss should mostly decrease, got {losses:?}");
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss should end below its start: {losses:?}"
        );
        for log in &report.logs {
            for w in [log.alpha, log.beta, log.gamma] {
                assert!((w - 1.0 / 3.0).abs() < 1e-12, "triple weights stay uniform");
            }
        }

        // Artifacts: log CSV, report JSON, loadable checkpoint.
        let logs = read_training_log(&out.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(logs, report.logs);
        let report2 = read_report(out.path()).unwrap();
        assert_eq!(report2, report);
        let mut model = TrainedModel::load(&report.checkpoint_dir).unwrap();
        assert!(matches!(model, TrainedModel::TwoChannel(_)));
        assert_eq!(model_scalar_count(&mut model), report.scalar_count);
    }

    #[test]
    fn adaptive_run_logs_uniform_then_adaptive_weights() {
        let (data, split) = tiny_dataset();
        let out = tempdir().unwrap();
        let config = tiny_config(TrainMode::AdaptiveTripleDice, 4);
        let report = train(&config, data.path(), &split, out.path()).unwrap();

        for log in &report.logs[..2] {
            assert!((log.alpha - 1.0 / 3.0).abs() < 1e-12, "warmup is uniform");
            assert!((log.gamma - 1.0 / 3.0).abs() < 1e-12);
        }
        for log in &report.logs[2..] {
            assert!(
                (log.alpha + log.beta + log.gamma - 1.0).abs() < 1e-9,
                "weights stay a partition of unity"
            );
            assert!(log.gamma >= 1.0 / 3.0 - 1e-9, "common term dominates");
            assert!(
                (log.alpha - 1.0 / 3.0).abs() > 1e-9,
                "adaptive phase departs from uniform weights"
            );
        }
    }

    #[test]
    fn training_is_deterministic_under_a_fixed_seed() {
        let (data, split) = tiny_dataset();
        let out_a = tempdir().unwrap();
        let out_b = tempdir().unwrap();
        let mut config = tiny_config(TrainMode::DualDice, 2);
        // Exercise the augmentation stream too.
        config.augment_policy = AugmentPolicy {
            p_hflip: 0.5,
            p_vflip: 0.5,
            max_translate_frac: 0.1,
            max_rotate_deg: 10.0,
            seed: 3,
        };
        let report_a = train(&config, data.path(), &split, out_a.path()).unwrap();
        let report_b = train(&config, data.path(), &split, out_b.path()).unwrap();
        assert_eq!(report_a.logs, report_b.logs);
        let weights = |dir: &Path| std::fs::read(dir.join("weights.bin")).unwrap();
        assert_eq!(
            weights(&report_a.checkpoint_dir),
            weights(&report_b.checkpoint_dir),
            "checkpoints should match bit for bit"
        );
    }

    #[test]
    fn single_boundary_regime_trains_a_network_pair() {
        let (data, split) = tiny_dataset();
        let out_single = tempdir().unwrap();
        let out_dual = tempdir().unwrap();
        let report_single = train(
            &tiny_config(TrainMode::SingleDice, 2),
            data.path(),
            &split,
            out_single.path(),
        )
        .unwrap();
        let report_dual = train(
            &tiny_config(TrainMode::DualDice, 2),
            data.path(),
            &split,
            out_dual.path(),
        )
        .unwrap();

        // Two independent encoders cost about twice the scalars; the two
        // single-channel heads shave off only a few.
        let ratio = report_single.scalar_count as f64 / report_dual.scalar_count as f64;
        assert!(
            (ratio - 2.0).abs() < 0.02,
            "expected about 2x the parameters, got ratio {ratio}"
        );
        for log in &report_single.logs {
            assert_eq!((log.alpha, log.beta, log.gamma), (0.0, 0.0, 0.0));
            assert_eq!(log.l_cvw, 0.0);
            assert!(log.l_mab > 0.0 && log.l_lib > 0.0);
        }
        let model = TrainedModel::load(&report_single.checkpoint_dir).unwrap();
        assert!(matches!(model, TrainedModel::PerBoundary { .. }));
    }

    #[test]
    fn best_checkpoint_is_at_least_as_good_as_the_final_epoch() {
        let (data, split) = tiny_dataset();
        let out = tempdir().unwrap();
        let report = train(
            &tiny_config(TrainMode::DualDice, 4),
            data.path(),
            &split,
            out.path(),
        )
        .unwrap();
        assert!(report.best_val_dsc >= report.final_val_dsc);
        let best_from_logs = report
            .logs
            .iter()
            .map(|l| l.val_dsc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_val_dsc, best_from_logs);
        let (_, manifest) =
            UNet::<f32>::load_checkpoint(&report.checkpoint_dir).unwrap();
        assert_eq!(manifest.epoch, report.best_epoch);
        assert_eq!(manifest.val_dice_history.len(), report.best_epoch + 1);
    }

    #[test]
    fn reslice_expansion_respects_the_epoch_sample_cap() {
        let (data, split) = tiny_dataset();
        let out = tempdir().unwrap();
        let mut config = tiny_config(TrainMode::DualDice, 1);
        config.use_reslice_augment = true;
        // Source spacing 1 mm, target 0.5 mm: 4-slice volumes become 7.
        config.reslice_spacing_mm = 0.5;
        config.epoch_sample_cap = 10;
        let report = train(&config, data.path(), &split, out.path()).unwrap();
        assert_eq!(report.epoch_samples, 10);

        // Without the cap binding, every resliced slice is visited.
        let out2 = tempdir().unwrap();
        config.epoch_sample_cap = 10_000;
        let report2 = train(&config, data.path(), &split, out2.path()).unwrap();
        assert_eq!(report2.epoch_samples, 6 * 7);
    }

    #[test]
    fn missing_partitions_are_rejected() {
        let (data, split) = tiny_dataset();
        let out = tempdir().unwrap();
        let empty_train = DatasetSplit {
            train_ids: vec!["subject_999".into()],
            ..split.clone()
        };
        let err = train(
            &tiny_config(TrainMode::DualDice, 1),
            data.path(),
            &empty_train,
            out.path(),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("training partition"), "got: {err}");

        let empty_val = DatasetSplit {
            val_ids: vec![],
            ..split
        };
        let err = train(
            &tiny_config(TrainMode::DualDice, 1),
            data.path(),
            &empty_val,
            out.path(),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("validation partition"), "got: {err}");
    }
}
