//! Acceptance gate for the whole pipeline: ten checks, each printing one
//! PASS/FAIL line (visible with `--nocapture`) and enforcing a wall-clock
//! budget. Checks 1-7 pin formulas, gradients, voting, metrics,
//! interpolation, volumetry and statistics against independent oracles;
//! checks 8-9 run scaled end-to-end experiments on a shared synthetic
//! cohort; check 10 re-asserts the cross-module invariant suite in compact
//! form.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use vesselseg::augment::{augment_sample, shape_interp_reslice, AugmentPolicy};
use vesselseg::dataset::{discover_cohort, entries_for, load_labeled, subject_ids, Artery};
use vesselseg::experiment::{run_matrix, ArteryDataset, SettingSummary};
use vesselseg::infer::{
    binarize, majority_vote, segment_volume, SegmentOptions, TrainedModel, BINARY_THRESHOLD,
};
use vesselseg::loss::{
    adaptive_phase, atdl_weights, derive_cvw, dice_loss, dice_loss_grad, weighted_batch_loss,
    LossMode, Objective,
};
use vesselseg::metrics::{
    dsc, extract_contour, mad_maxd, symmetric_correspondence, Boundary, EvalRecord,
};
use vesselseg::net::{NetConfig, Tensor, UNet};
use vesselseg::phantom::{generate_cohort, generate_phantom, PhantomSpec};
use vesselseg::resample::{hflip, vflip, Image, Mask, ResampleMap};
use vesselseg::stats::{bland_altman, pearson, tukey_hsd};
use vesselseg::trainer::{train, TrainConfig, TrainMode, CHECKPOINT_DIR};
use vesselseg::volume::{
    interpolate_roi, make_split, DatasetSplit, LabelPair, RoiBox, Volume,
};

/// Runs one acceptance check, prints its PASS/FAIL line and enforces the
/// wall-clock budget.
fn check(name: &str, budget: Duration, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let ok = outcome.is_ok() && elapsed <= budget;
    println!(
        "acceptance {name}: {} ({elapsed:.2?} of {budget:?} budget)",
        if ok { "PASS" } else { "FAIL" }
    );
    if let Err(cause) = outcome {
        resume_unwind(cause);
    }
    assert!(
        elapsed <= budget,
        "{name} exceeded its wall-clock budget: {elapsed:?} > {budget:?}"
    );
}

fn disk(h: usize, w: usize, cy: f64, cx: f64, radius: f64) -> Mask {
    Mask::from_shape_fn((h, w), |(r, c)| {
        u8::from((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= radius * radius)
    })
}

// ---------------------------------------------------------------------------
// 1. Adaptive weight formula.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_adaptive_weight_formula() {
    check("1 adaptive weight formula", Duration::from_secs(1), || {
        for &a in &[0.1, 0.5, 2.0] {
            // Exact endpoints: zero loss gives zero weight, total loss gives
            // exactly one third.
            assert_eq!(atdl_weights(0.0, 0.7, a).alpha, 0.0);
            assert_eq!(atdl_weights(0.3, 0.0, a).beta, 0.0);
            assert_eq!(atdl_weights(1.0, 0.2, a).alpha, 1.0 / 3.0);
            assert_eq!(atdl_weights(0.4, 1.0, a).beta, 1.0 / 3.0);

            // Strict monotonicity and the convex-combination identity on a
            // 101-point grid.
            let mut prev_alpha = -1.0;
            let mut prev_beta = -1.0;
            for k in 0..=100 {
                let l = k as f64 / 100.0;
                let by_mab = atdl_weights(l, 0.5, a);
                let by_lib = atdl_weights(0.5, l, a);
                assert!(by_mab.alpha > prev_alpha, "alpha not increasing at {l}");
                assert!(by_lib.beta > prev_beta, "beta not increasing at {l}");
                prev_alpha = by_mab.alpha;
                prev_beta = by_lib.beta;
                for w in [by_mab, by_lib] {
                    assert!((w.alpha + w.beta + w.gamma - 1.0).abs() <= 1e-12);
                    assert!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness of the Dice loss and every composite objective.
// ---------------------------------------------------------------------------

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central finite differences of `f` at six random coordinates of `prob`,
/// compared against `grad` entries.
fn probe_gradient(
    prob: &Tensor<f64>,
    grad: &Tensor<f64>,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) {
    let (n, c, h, w) = prob.dim();
    let step = 1e-6;
    for _ in 0..6 {
        let idx = [
            rng.random_range(0..n),
            rng.random_range(0..c),
            rng.random_range(0..h),
            rng.random_range(0..w),
        ];
        let mut plus = prob.clone();
        let mut minus = prob.clone();
        plus[idx] += step;
        minus[idx] -= step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        let analytic = grad[idx];
        assert!(
            relative_error(analytic, numeric) <= 1e-4,
            "gradient mismatch at {idx:?}: analytic {analytic}, numeric {numeric}"
        );
    }
}

fn random_probs(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Array4::from_shape_simple_fn(shape, || rng.random_range(0.05..0.95))
}

fn random_binary(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Array4::from_shape_simple_fn(shape, || f64::from(rng.random_bool(0.5)))
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    check("2 objective gradients", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(20240);
        for instance in 0..20 {
            match instance % 5 {
                0 => {
                    // Raw soft Dice on an 8x8 map.
                    let prob = random_probs((1, 1, 8, 8), &mut rng);
                    let target = random_binary((1, 1, 8, 8), &mut rng);
                    let p2 = prob.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
                    let t2 = target.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
                    let (_, g2) = dice_loss_grad(p2.view(), t2.view());
                    let grad = g2.insert_axis(Axis(0)).insert_axis(Axis(0));
                    probe_gradient(&prob, &grad, &mut rng, |p| {
                        let pv = p.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
                        dice_loss(pv.view(), t2.view())
                    });
                }
                1 => {
                    let boundary = if instance % 2 == 0 { Boundary::Mab } else { Boundary::Lib };
                    let objective = Objective::new(LossMode::Single(boundary), 0.5);
                    let prob = random_probs((2, 1, 8, 8), &mut rng);
                    let target = random_binary((2, 1, 8, 8), &mut rng);
                    let batch = objective.evaluate(&prob, &target, 0, 10).unwrap();
                    probe_gradient(&prob, &batch.grad, &mut rng, |p| {
                        objective.evaluate(p, &target, 0, 10).unwrap().total
                    });
                }
                2 | 3 => {
                    let mode = if instance % 5 == 2 { LossMode::Dual } else { LossMode::Triple };
                    let objective = Objective::new(mode, 0.5);
                    let prob = random_probs((2, 2, 8, 8), &mut rng);
                    let target = random_binary((2, 2, 8, 8), &mut rng);
                    let batch = objective.evaluate(&prob, &target, 0, 10).unwrap();
                    probe_gradient(&prob, &batch.grad, &mut rng, |p| {
                        objective.evaluate(p, &target, 0, 10).unwrap().total
                    });
                }
                _ => {
                    // Adaptive triple in its adaptive phase: the weights are
                    // constants of the differentiation, so finite differences
                    // run against the frozen-weight objective.
                    let objective = Objective::new(LossMode::AdaptiveTriple, 0.5);
                    let prob = random_probs((2, 2, 8, 8), &mut rng);
                    let target = random_binary((2, 2, 8, 8), &mut rng);
                    assert!(adaptive_phase(9, 10));
                    let batch = objective.evaluate(&prob, &target, 9, 10).unwrap();
                    let frozen = batch.weights;
                    probe_gradient(&prob, &batch.grad, &mut rng, |p| {
                        weighted_batch_loss(p, &target, frozen).unwrap().total
                    });
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 3. Majority voting against the exhaustive vote-pattern oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_tta_voting_matches_exhaustive_oracle() {
    check("3 vote oracle and flip round trip", Duration::from_secs(5), || {
        // Brute-force truth table over all 2^3 vote patterns.
        let mut table = [0u8; 8];
        for (pattern, out) in table.iter_mut().enumerate() {
            let votes = (pattern >> 2 & 1) + (pattern >> 1 & 1) + (pattern & 1);
            *out = u8::from(votes >= 2);
        }

        // 1000 random pixels.
        let mut rng = ChaCha8Rng::seed_from_u64(3333);
        let shape = (25, 40);
        let a = Mask::from_shape_simple_fn(shape, || rng.random_range(0..=1u8));
        let b = Mask::from_shape_simple_fn(shape, || rng.random_range(0..=1u8));
        let c = Mask::from_shape_simple_fn(shape, || rng.random_range(0..=1u8));
        let voted = majority_vote([&a, &b, &c]);
        for r in 0..shape.0 {
            for col in 0..shape.1 {
                let pattern =
                    ((a[[r, col]] as usize) << 2) | ((b[[r, col]] as usize) << 1) | c[[r, col]] as usize;
                assert_eq!(voted[[r, col]], table[pattern], "pixel ({r},{col})");
            }
        }

        // Flip / un-flip round trips are exact, on probabilities and masks.
        let image = Image::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0f32));
        assert_eq!(hflip(&hflip(&image)), image);
        assert_eq!(vflip(&vflip(&image)), image);
        assert_eq!(hflip(&vflip(&a)), vflip(&hflip(&a)));
        let probs = binarize(&image, BINARY_THRESHOLD);
        assert_eq!(vflip(&vflip(&probs)), probs);
    });
}

// ---------------------------------------------------------------------------
// 4. Geometric metric oracles on analytic fixtures.
// ---------------------------------------------------------------------------

fn brute_force_dsc(a: &Mask, m: &Mask) -> f64 {
    let mut inter = 0usize;
    let mut count_a = 0usize;
    let mut count_m = 0usize;
    for (&x, &y) in a.iter().zip(m.iter()) {
        inter += usize::from(x == 1 && y == 1);
        count_a += usize::from(x == 1);
        count_m += usize::from(y == 1);
    }
    if count_a + count_m == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (count_a + count_m) as f64
}

#[test]
fn criterion_04_metric_oracles_on_disks_and_annuli() {
    check("4 metric oracles", Duration::from_secs(10), || {
        // DSC equals the brute-force pixel count on disk and annulus pairs.
        let d1 = disk(40, 40, 16.0, 16.0, 9.5);
        let d2 = disk(40, 40, 18.0, 17.0, 9.5);
        let mut annulus = disk(40, 40, 16.0, 16.0, 12.0);
        let hole = disk(40, 40, 16.0, 16.0, 6.0);
        ndarray::Zip::from(&mut annulus).and(&hole).for_each(|a, &h| *a &= 1 - h);
        for (x, y) in [(&d1, &d2), (&annulus, &d1), (&d1, &d1)] {
            assert!((dsc(x, y) - brute_force_dsc(x, y)).abs() < 1e-15);
        }

        // Concentric circles of radii 10 mm and 12 mm: every correspondence
        // distance is the 2 mm radial gap.
        let spacing = (0.1, 0.1);
        let inner = disk(260, 260, 129.5, 129.5, 100.0);
        let outer = disk(260, 260, 129.5, 129.5, 120.0);
        let c_inner = extract_contour(&inner, spacing).unwrap();
        let c_outer = extract_contour(&outer, spacing).unwrap();
        let pairs = symmetric_correspondence(&c_inner, &c_outer).unwrap();
        let (mad, maxd) = mad_maxd(&pairs).unwrap();
        assert!((mad - 2.0).abs() <= 0.05, "mad {mad} not within 0.05 of 2 mm");
        assert!((maxd - 2.0).abs() <= 0.05, "maxd {maxd} not within 0.05 of 2 mm");
        assert!(mad <= maxd);
    });
}

// ---------------------------------------------------------------------------
// 5. Shape-based interpolation midpoint and identity.
// ---------------------------------------------------------------------------

fn two_slice_volume(h: usize, w: usize) -> Volume {
    Volume::new(Array3::zeros((2, h, w)), (0.1, 0.1), 1.0).unwrap()
}

#[test]
fn criterion_05_shape_interpolation_midpoint() {
    check("5 shape interpolation", Duration::from_secs(5), || {
        let volume = two_slice_volume(96, 96);
        let labels = vec![
            LabelPair::new(disk(96, 96, 47.5, 47.5, 10.0), disk(96, 96, 47.5, 47.5, 5.0), 0)
                .unwrap(),
            LabelPair::new(disk(96, 96, 47.5, 47.5, 20.0), disk(96, 96, 47.5, 47.5, 10.0), 1)
                .unwrap(),
        ];
        let (_, resliced) = shape_interp_reslice(&volume, &labels, 0.5).unwrap();
        assert_eq!(resliced.len(), 3);
        let area = resliced[1].mab_mask.iter().map(|&v| v as usize).sum::<usize>();
        let radius = (area as f64 / std::f64::consts::PI).sqrt();
        assert!(
            (radius - 15.0).abs() <= 0.5,
            "midpoint radius {radius} not within 0.5 px of 15"
        );

        // Identical endpoints interpolate to identity.
        let same = vec![
            LabelPair::new(disk(96, 96, 47.5, 47.5, 12.0), disk(96, 96, 47.5, 47.5, 6.0), 0)
                .unwrap(),
            LabelPair::new(disk(96, 96, 47.5, 47.5, 12.0), disk(96, 96, 47.5, 47.5, 6.0), 1)
                .unwrap(),
        ];
        let (_, constant) = shape_interp_reslice(&volume, &same, 0.5).unwrap();
        for pair in &constant {
            assert_eq!(pair.mab_mask, same[0].mab_mask);
            assert_eq!(pair.lib_mask, same[0].lib_mask);
        }
    });
}

// ---------------------------------------------------------------------------
// 6. Volumetry against the analytic annulus volume.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_wall_volume_matches_analytic_value() {
    check("6 wall volumetry", Duration::from_secs(5), || {
        let labels: Vec<LabelPair> = (0..10)
            .map(|i| {
                LabelPair::new(
                    disk(64, 64, 31.5, 31.5, 20.0),
                    disk(64, 64, 31.5, 31.5, 14.0),
                    i,
                )
                .unwrap()
            })
            .collect();
        let measured = vesselseg::volumetry::vwv(&labels, (0.1, 0.1), 1.0).unwrap();
        let analytic = std::f64::consts::PI * (2.0f64.powi(2) - 1.4f64.powi(2)) * 10.0;
        assert!((analytic - 64.09).abs() < 0.01, "fixture arithmetic drifted");
        let relative = (measured - analytic).abs() / analytic;
        assert!(
            relative <= 0.03,
            "wall volume {measured:.3} deviates {relative:.4} from analytic {analytic:.3}"
        );
    });
}

// ---------------------------------------------------------------------------
// 7. Statistics fixtures.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_statistics_fixtures() {
    check("7 statistics fixtures", Duration::from_secs(5), || {
        // Pearson correlation of a hand-computable quadruple is exactly 0.8.
        let (r, _) = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() <= 1e-12, "r {r}");

        // Bland-Altman of [2,1,3] vs [1,1,2]: bias 2/3, limits of agreement
        // bias +/- 1.96 sd.
        let ba = bland_altman(&[2.0, 1.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((ba.bias - 0.6667).abs() <= 1e-3, "bias {}", ba.bias);
        assert!((ba.loa_low - (-0.465)).abs() <= 1e-3, "low {}", ba.loa_low);
        assert!((ba.loa_high - 1.798).abs() <= 1e-3, "high {}", ba.loa_high);

        // Three-group pairwise comparisons against reference p-values from a
        // standard statistics package.
        let groups = vec![
            ("a".to_string(), vec![24.5, 23.5, 26.4, 27.1, 29.9]),
            ("b".to_string(), vec![28.4, 34.2, 29.5, 32.2, 30.1]),
            ("c".to_string(), vec![26.1, 28.3, 24.3, 26.2, 27.8]),
        ];
        let result = tukey_hsd(&groups).unwrap();
        let reference = [
            ("a", "b", -4.6, 0.0144483267),
            ("a", "c", -0.26, 0.9803107241),
            ("b", "c", 4.34, 0.0203311367),
        ];
        assert_eq!(result.comparisons.len(), 3);
        for (cmp, (ga, gb, diff, p)) in result.comparisons.iter().zip(reference) {
            assert_eq!(cmp.group_a, ga);
            assert_eq!(cmp.group_b, gb);
            assert!((cmp.mean_diff - diff).abs() <= 1e-9);
            assert!(
                (cmp.p_value - p).abs() <= 1e-3,
                "{ga}-{gb}: p {} vs reference {p}",
                cmp.p_value
            );
        }
    });
}

// ---------------------------------------------------------------------------
// Shared synthetic cohort for the end-to-end checks.
// ---------------------------------------------------------------------------

const COHORT_SEED: u64 = 424242;
const SPLIT_SEED: u64 = 11;

struct CohortFixture {
    _dir: TempDir,
    root: PathBuf,
    split: DatasetSplit,
}

static COHORT: OnceLock<CohortFixture> = OnceLock::new();

fn easy_cohort_spec() -> PhantomSpec {
    PhantomSpec {
        n_slices: 8,
        image_size: (64, 80),
        centerline_drift_amplitude: 2.0,
        mab_radius_range: (10.0, 14.0),
        wall_thickness_range: (3.0, 4.5),
        ellipticity_range: (0.95, 1.05),
        speckle_strength: 0.05,
        shadow_probability: 0.0,
        roi_boxes: false,
        in_plane_spacing_mm: (0.1, 0.1),
        slice_spacing_mm: 1.0,
        seed: COHORT_SEED,
    }
}

fn base_train_config() -> TrainConfig {
    TrainConfig {
        mode: TrainMode::AdaptiveTripleDice,
        adaptive_a: 0.5,
        learning_rate: 3e-3,
        beta1: 0.9,
        beta2: 0.999,
        batch_size: 8,
        epochs: 10,
        seed: 7,
        use_reslice_augment: true,
        reslice_spacing_mm: 0.25,
        epoch_sample_cap: 512,
        augment_policy: AugmentPolicy {
            p_hflip: 0.5,
            p_vflip: 0.5,
            max_translate_frac: 0.05,
            max_rotate_deg: 5.0,
            seed: 99,
        },
        net: NetConfig {
            input_size: (64, 80),
            depth: 3,
            base_channels: 8,
            channel_growth: 2,
            batch_norm: true,
            in_channels: 1,
            out_channels: 2,
        },
    }
}

fn cohort() -> &'static CohortFixture {
    COHORT.get_or_init(|| {
        let dir = TempDir::new().expect("temp cohort dir");
        let root = dir.path().join("cohort");
        generate_cohort(&root, 20, &easy_cohort_spec(), COHORT_SEED).expect("cohort");
        let entries = discover_cohort(&root).expect("discover cohort");
        let split = make_split(&subject_ids(&entries), SPLIT_SEED).expect("split");
        CohortFixture { _dir: dir, root, split }
    })
}

/// Per-volume mean DSC of one boundary across the volume's slices.
fn volume_mean_dsc(records: &[EvalRecord], boundary: Boundary) -> f64 {
    let scores: Vec<f64> = records
        .iter()
        .filter(|r| r.boundary == boundary)
        .map(|r| r.dsc)
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

// ---------------------------------------------------------------------------
// 8. End-to-end training quality on the easy cohort.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_end_to_end_training_quality() {
    check("8 end-to-end training", Duration::from_secs(30 * 60), || {
        let fixture = cohort();
        let out = TempDir::new().unwrap();
        let config = base_train_config();
        let report = train(&config, &fixture.root, &fixture.split, out.path()).unwrap();

        let mut model = TrainedModel::load(&out.path().join(CHECKPOINT_DIR)).unwrap();
        let entries = discover_cohort(&fixture.root).unwrap();
        let test_entries = entries_for(&entries, &fixture.split.test_ids);
        assert!(!test_entries.is_empty());

        let mut mab_scores = Vec::new();
        let mut lib_scores = Vec::new();
        for entry in test_entries {
            let lv = load_labeled(&entry.dir).unwrap();
            let options = SegmentOptions {
                tta: true,
                input_size: config.net.input_size,
                checkpoint_id: "acceptance".into(),
            };
            let result = segment_volume(&mut model, &lv.volume, &options).unwrap();
            let records = vesselseg::experiment::evaluate_labels(
                &lv.name,
                &result.labels,
                &lv.labels,
                lv.volume.in_plane_spacing,
            );
            mab_scores.push(volume_mean_dsc(&records, Boundary::Mab));
            lib_scores.push(volume_mean_dsc(&records, Boundary::Lib));
        }
        let mab = mab_scores.iter().sum::<f64>() / mab_scores.len() as f64;
        let lib = lib_scores.iter().sum::<f64>() / lib_scores.len() as f64;
        println!(
            "  test DSC: MAB {mab:.4} (floor 0.90), LIB {lib:.4} (floor 0.85); \
             best val {:.4} at epoch {}",
            report.best_val_dsc, report.best_epoch
        );
        assert!(mab >= 0.90, "test MAB DSC {mab:.4} below 0.90");
        assert!(lib >= 0.85, "test LIB DSC {lib:.4} below 0.85");
    });
}

// ---------------------------------------------------------------------------
// 9. Comparison-matrix direction check on the same cohort.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_matrix_direction_check() {
    check("9 matrix direction", Duration::from_secs(2 * 60 * 60), || {
        let fixture = cohort();
        let out = TempDir::new().unwrap();
        let datasets = [ArteryDataset {
            artery: Artery::Cca,
            root: fixture.root.clone(),
        }];
        let summaries =
            run_matrix(&base_train_config(), &datasets, SPLIT_SEED, out.path()).unwrap();
        assert_eq!(summaries.len(), 9, "one row per setting");

        let find = |name: &str| -> &SettingSummary {
            summaries
                .iter()
                .find(|s| s.setting == name)
                .unwrap_or_else(|| panic!("setting {name} missing"))
        };
        let adaptive_tta = find("atdl_tta");
        let triple = find("tdl");
        println!(
            "  atdl_tta MAB {:.4} LIB {:.4} vs tdl MAB {:.4} LIB {:.4}",
            adaptive_tta.mean_dsc_mab,
            adaptive_tta.mean_dsc_lib,
            triple.mean_dsc_mab,
            triple.mean_dsc_lib
        );
        assert!(
            adaptive_tta.mean_dsc_mab >= triple.mean_dsc_mab - 0.02,
            "MAB ordering violated: {:.4} < {:.4} - 0.02",
            adaptive_tta.mean_dsc_mab,
            triple.mean_dsc_mab
        );
        assert!(
            adaptive_tta.mean_dsc_lib >= triple.mean_dsc_lib - 0.02,
            "LIB ordering violated: {:.4} < {:.4} - 0.02",
            adaptive_tta.mean_dsc_lib,
            triple.mean_dsc_lib
        );
    });
}

// ---------------------------------------------------------------------------
// 10. Cross-module invariant suite, compact re-assertion.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_invariant_suite() {
    check("10 invariant suite", Duration::from_secs(10 * 60), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1010);

        // Volume handling: normalization is idempotent.
        let voxels = Array3::from_shape_simple_fn((3, 24, 24), || rng.random_range(0.0..255.0f32));
        let mut volume = Volume::new(voxels, (0.1, 0.1), 1.0).unwrap();
        volume.normalize_intensities();
        let once: Vec<Image> = (0..3).map(|i| volume.slice_image(i)).collect();
        volume.normalize_intensities();
        for (i, img) in once.iter().enumerate() {
            assert_eq!(volume.slice_view(i), *img, "normalization not idempotent");
        }

        // ROI interpolation returns the expanded boxes at the endpoints.
        let first = RoiBox::new(0, [10, 10], [50, 50]).unwrap();
        let last = RoiBox::new(4, [30, 30], [70, 70]).unwrap();
        let boxes = interpolate_roi(&first, &last, (90, 90)).unwrap();
        assert_eq!(boxes[0].top_left, [0, 0]);
        assert_eq!(boxes[0].bottom_right, [80, 80]);
        assert_eq!(boxes[4].top_left, [10, 10]);
        assert_eq!(boxes[4].bottom_right, [90, 90]);

        // Resampling round trip keeps convex masks nearly intact.
        let map = ResampleMap::full_frame((64, 64), (128, 128)).unwrap();
        let convex = disk(64, 64, 31.5, 31.5, 14.0);
        let round = map.restore_mask(&map.apply_mask(&convex).unwrap()).unwrap();
        assert!(dsc(&convex, &round) >= 0.98);

        // Nesting is enforced at construction.
        assert!(LabelPair::new(disk(32, 32, 15.5, 15.5, 6.0), disk(32, 32, 15.5, 15.5, 9.0), 0)
            .is_err());

        // Phantoms: nested labels and a darker lumen.
        let spec = PhantomSpec {
            speckle_strength: 0.3,
            ..easy_cohort_spec()
        };
        let (phantom, labels) = generate_phantom(&spec).unwrap();
        for (i, pair) in labels.iter().enumerate() {
            let slice = phantom.slice_view(i);
            let mut lumen = (0.0f64, 0usize);
            let mut wall = (0.0f64, 0usize);
            ndarray::Zip::indexed(&pair.mab_mask).for_each(|(r, c), &m| {
                let l = pair.lib_mask[[r, c]];
                assert!(l <= m, "labels not nested");
                let v = slice[[r, c]] as f64;
                if l == 1 {
                    lumen = (lumen.0 + v, lumen.1 + 1);
                } else if m == 1 {
                    wall = (wall.0 + v, wall.1 + 1);
                }
            });
            assert!(
                lumen.0 / (lumen.1 as f64) < wall.0 / (wall.1 as f64),
                "lumen not darker than wall on slice {i}"
            );
        }

        // Augmentation preserves nesting; reslicing at the source spacing is
        // the identity.
        let pair = LabelPair::new(disk(48, 48, 23.5, 23.5, 12.0), disk(48, 48, 23.5, 23.5, 7.0), 0)
            .unwrap();
        let image = Image::from_shape_simple_fn((48, 48), || rng.random_range(0.0..1.0f32));
        let policy = AugmentPolicy {
            p_hflip: 1.0,
            p_vflip: 1.0,
            max_translate_frac: 0.3,
            max_rotate_deg: 30.0,
            seed: 0,
        };
        for _ in 0..5 {
            let (_, aug) = augment_sample(&image, &pair, &policy, &mut rng);
            ndarray::Zip::from(&aug.lib_mask).and(&aug.mab_mask).for_each(|&l, &m| {
                assert!(l <= m, "augmentation broke nesting");
            });
        }
        let identity_volume = two_slice_volume(48, 48);
        let two = vec![pair.clone(), LabelPair { slice_index: 1, ..pair.clone() }];
        let (saved, kept) = shape_interp_reslice(&identity_volume, &two, 1.0).unwrap();
        assert_eq!(saved.n_slices(), 2);
        assert_eq!(kept[0].mab_mask, two[0].mab_mask);
        assert_eq!(kept[1].lib_mask, two[1].lib_mask);

        // Derived wall probabilities stay bounded by the outer boundary.
        let mab = Array2::<f64>::from_shape_simple_fn((9, 9), || rng.random_range(0.0..=1.0));
        let lib = Array2::<f64>::from_shape_simple_fn((9, 9), || rng.random_range(0.0..=1.0));
        let wall = derive_cvw(mab.view(), lib.view());
        ndarray::Zip::from(&wall).and(&mab).for_each(|&w, &m| {
            assert!((0.0..=1.0).contains(&w) && w <= m);
        });

        // Evaluation-mode forward passes are deterministic.
        let net_config = NetConfig {
            input_size: (16, 16),
            depth: 2,
            base_channels: 4,
            channel_growth: 2,
            batch_norm: true,
            in_channels: 1,
            out_channels: 2,
        };
        let mut net = UNet::<f32>::new(net_config.clone(), 8).unwrap();
        let x = Array4::from_shape_simple_fn((2, 1, 16, 16), || rng.random_range(0.0..1.0f32));
        let y1 = net.forward(&x, false).unwrap();
        let y2 = net.forward(&x, false).unwrap();
        assert_eq!(y1, y2);

        // A pair of one-channel networks carries about twice the parameters
        // of one two-channel network.
        let mut single = net_config.clone();
        single.out_channels = 1;
        let pair_scalars = 2 * UNet::<f32>::new(single, 1).unwrap().scalar_count();
        let joint_scalars = UNet::<f32>::new(net_config, 1).unwrap().scalar_count();
        let ratio = pair_scalars as f64 / joint_scalars as f64;
        assert!((ratio - 2.0).abs() < 0.05, "parameter ratio {ratio}");

        // Adaptive weights never push the wall term below uniform.
        for _ in 0..200 {
            let w = atdl_weights(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0), 0.5);
            assert!(w.gamma >= 1.0 / 3.0 - 1e-12);
        }

        // Segmentation output always nests, even from untrained weights.
        let mut model = TrainedModel::TwoChannel(
            UNet::new(
                NetConfig {
                    input_size: (16, 16),
                    depth: 2,
                    base_channels: 4,
                    channel_growth: 2,
                    batch_norm: true,
                    in_channels: 1,
                    out_channels: 2,
                },
                21,
            )
            .unwrap(),
        );
        let probe_volume = Volume::new(
            Array3::from_shape_simple_fn((3, 16, 16), || rng.random_range(0.0..1.0f32)),
            (0.1, 0.1),
            1.0,
        )
        .unwrap();
        let options = SegmentOptions {
            tta: true,
            input_size: (16, 16),
            checkpoint_id: "invariants".into(),
        };
        let segmented = segment_volume(&mut model, &probe_volume, &options).unwrap();
        for pair in &segmented.labels {
            ndarray::Zip::from(&pair.lib_mask).and(&pair.mab_mask).for_each(|&l, &m| {
                assert!(l <= m);
            });
        }

        // Metric properties: symmetry, self-identity, MAD <= MAXD, symmetric
        // correspondence multiset.
        let m1 = disk(32, 32, 15.0, 15.0, 8.0);
        let m2 = disk(32, 32, 17.0, 16.0, 7.0);
        assert_eq!(dsc(&m1, &m2), dsc(&m2, &m1));
        assert_eq!(dsc(&m1, &m1), 1.0);
        let c1 = extract_contour(&m1, (0.1, 0.1)).unwrap();
        let c2 = extract_contour(&m2, (0.1, 0.1)).unwrap();
        let forward_pairs = symmetric_correspondence(&c1, &c2).unwrap();
        let reverse_pairs = symmetric_correspondence(&c2, &c1).unwrap();
        let (mad_f, maxd_f) = mad_maxd(&forward_pairs).unwrap();
        let (mad_r, maxd_r) = mad_maxd(&reverse_pairs).unwrap();
        assert!(mad_f <= maxd_f);
        assert!((mad_f - mad_r).abs() < 1e-12);
        assert!((maxd_f - maxd_r).abs() < 1e-12);

        // Volumetry: definitional sum, shift invariance, non-negative
        // thickness.
        let centered: Vec<LabelPair> = (0..3)
            .map(|i| {
                LabelPair::new(disk(48, 48, 23.5, 23.5, 14.0), disk(48, 48, 23.5, 23.5, 9.0), i)
                    .unwrap()
            })
            .collect();
        let shifted: Vec<LabelPair> = (0..3)
            .map(|i| {
                LabelPair::new(disk(48, 48, 20.5, 26.5, 14.0), disk(48, 48, 20.5, 26.5, 9.0), i)
                    .unwrap()
            })
            .collect();
        let v_center = vesselseg::volumetry::vwv(&centered, (0.1, 0.1), 0.5).unwrap();
        let v_shift = vesselseg::volumetry::vwv(&shifted, (0.1, 0.1), 0.5).unwrap();
        assert_eq!(v_center, v_shift);
        let wall_pixels: usize = centered
            .iter()
            .map(|p| p.wall_mask().iter().map(|&v| v as usize).sum::<usize>())
            .sum();
        let expected = wall_pixels as f64 * 0.1 * 0.1 * 0.5;
        assert!((v_center - expected).abs() < 1e-9);
        let thickness =
            vesselseg::volumetry::vwt_profile(&c1, &extract_contour(&disk(32, 32, 15.0, 15.0, 4.0), (0.1, 0.1)).unwrap())
                .unwrap();
        assert!(thickness.iter().all(|&t| t >= 0.0));

        // Statistics: affine invariance, mirrored agreement, order-symmetric
        // pairwise comparisons.
        let xs = [0.3, 1.7, 2.2, 4.5, 5.1, 6.0];
        let ys = [2.0, 1.0, 2.5, 3.0, 4.5, 4.0];
        let (r0, _) = pearson(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|v| 3.5 * v + 11.0).collect();
        let (r1, _) = pearson(&xs2, &ys).unwrap();
        assert!((r0 - r1).abs() <= 1e-12);
        let ab = bland_altman(&xs, &ys).unwrap();
        let ba = bland_altman(&ys, &xs).unwrap();
        assert!((ab.bias + ba.bias).abs() < 1e-12);
        assert!((ab.loa_low + ba.loa_high).abs() < 1e-9);
        let g1 = ("a".to_string(), vec![1.0, 2.0, 3.0]);
        let g2 = ("b".to_string(), vec![2.5, 3.5, 4.5]);
        let fwd = tukey_hsd(&[g1.clone(), g2.clone()]).unwrap().comparisons[0].clone();
        let rev = tukey_hsd(&[g2, g1]).unwrap().comparisons[0].clone();
        assert!((fwd.p_value - rev.p_value).abs() < 1e-12);
        assert!((fwd.mean_diff + rev.mean_diff).abs() < 1e-12);

        // Trainer: a micro run logs convex weights, keeps the wall term at or
        // above uniform weight in the adaptive phase, and retains the best
        // validation checkpoint.
        let dir = TempDir::new().unwrap();
        let micro_root = dir.path().join("micro");
        let micro_spec = PhantomSpec {
            n_slices: 4,
            image_size: (32, 32),
            centerline_drift_amplitude: 1.0,
            mab_radius_range: (6.0, 8.0),
            wall_thickness_range: (2.5, 3.5),
            ellipticity_range: (0.95, 1.05),
            speckle_strength: 0.1,
            shadow_probability: 0.0,
            roi_boxes: false,
            in_plane_spacing_mm: (0.1, 0.1),
            slice_spacing_mm: 1.0,
            seed: 5,
        };
        generate_cohort(&micro_root, 8, &micro_spec, 5).unwrap();
        let micro_split = DatasetSplit {
            train_ids: vec![
                "subject_000".into(),
                "subject_001".into(),
                "subject_002".into(),
            ],
            val_ids: vec!["subject_003".into()],
            test_ids: vec![],
        };
        let micro_config = TrainConfig {
            mode: TrainMode::AdaptiveTripleDice,
            epochs: 2,
            batch_size: 4,
            seed: 3,
            use_reslice_augment: false,
            augment_policy: AugmentPolicy::disabled(),
            net: NetConfig {
                input_size: (32, 32),
                depth: 2,
                base_channels: 4,
                channel_growth: 2,
                batch_norm: true,
                in_channels: 1,
                out_channels: 2,
            },
            ..base_train_config()
        };
        let report = train(&micro_config, &micro_root, &micro_split, dir.path().join("run").as_path())
            .unwrap();
        for log in &report.logs {
            assert!((log.alpha + log.beta + log.gamma - 1.0).abs() <= 1e-9);
        }
        assert!((report.logs[0].gamma - 1.0 / 3.0).abs() <= 1e-9, "warmup not uniform");
        assert!(report.logs[1].gamma >= 1.0 / 3.0 - 1e-9, "wall weight below uniform");
        assert!(report.best_val_dsc >= report.final_val_dsc);
    });
}
