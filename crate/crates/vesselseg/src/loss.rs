//! Soft Dice training objectives over boundary probability maps.
//!
//! A two-channel prediction carries the outer boundary (MAB, channel 0) and
//! inner boundary (LIB, channel 1); the wall channel (CVW) is derived as
//! ReLU(p_mab - p_lib) and compared against the mask difference mab AND NOT
//! lib. Four objectives are supported:
//!
//! * single-boundary: plain Dice loss on a one-channel prediction,
//! * dual: 1/2 L_mab + 1/2 L_lib,
//! * triple: 1/3 each of L_mab, L_lib, L_cvw,
//! * adaptive triple: per-batch weights alpha = L1 / (3 (1 + a (1 - L1))),
//!   beta likewise from L2, gamma = 1 - alpha - beta, applied after a warmup
//!   phase of uniform weights during the first half of training. The weights
//!   are treated as constants when differentiating (detached).

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, NdFloat, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Boundary;
use crate::net::layers::{cast_scalar, to_f64};
use crate::net::Tensor;

/// Smoothing constant of the soft Dice ratio; makes empty-vs-empty exact 0.
pub const DICE_EPSILON: f64 = 1e-6;

/// Soft Dice loss 1 - (2 sum(y yhat) + eps) / (sum(y) + sum(yhat) + eps).
pub fn dice_loss<F: NdFloat>(prob: ArrayView2<'_, F>, target: ArrayView2<'_, F>) -> f64 {
    let (loss, _) = dice_loss_scalar_parts(prob, target);
    loss
}

fn dice_loss_scalar_parts<F: NdFloat>(
    prob: ArrayView2<'_, F>,
    target: ArrayView2<'_, F>,
) -> (f64, (f64, f64)) {
    debug_assert_eq!(prob.dim(), target.dim());
    let mut intersection = 0.0;
    let mut denom = 0.0;
    Zip::from(&prob).and(&target).for_each(|&p, &t| {
        let p = to_f64(p);
        let t = to_f64(t);
        intersection += p * t;
        denom += p + t;
    });
    let d = denom + DICE_EPSILON;
    let loss = 1.0 - (2.0 * intersection + DICE_EPSILON) / d;
    (loss, (intersection, d))
}

/// Soft Dice loss plus its analytic gradient with respect to the
/// probabilities: dL/dp_i = (2 I + eps) / D^2 - 2 y_i / D.
pub fn dice_loss_grad<F: NdFloat>(
    prob: ArrayView2<'_, F>,
    target: ArrayView2<'_, F>,
) -> (f64, ndarray::Array2<F>) {
    let (loss, (intersection, d)) = dice_loss_scalar_parts(prob, target);
    let numer_term = (2.0 * intersection + DICE_EPSILON) / (d * d);
    let grad = Zip::from(&target).map_collect(|&t| {
        cast_scalar::<F>(numer_term - 2.0 * to_f64(t) / d)
    });
    (loss, grad)
}

/// Convex combination weights of the three channel losses; always sums to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }

    pub fn dual() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.0,
        }
    }
}

/// Wall-channel probability derived from the two boundary channels:
/// `max(p_mab - p_lib, 0)`. For inputs in [0, 1] the output stays in [0, 1]
/// and never exceeds the outer-boundary probability.
pub fn derive_cvw<F: NdFloat>(mab: ArrayView2<F>, lib: ArrayView2<F>) -> Array2<F> {
    Zip::from(&mab).and(&lib).map_collect(|&a, &b| {
        let d = a - b;
        if d > F::zero() {
            d
        } else {
            F::zero()
        }
    })
}

/// Adaptive weights from detached batch-mean boundary losses.
pub fn atdl_weights(l_mab: f64, l_lib: f64, a: f64) -> LossWeights {
    let l1 = l_mab.clamp(0.0, 1.0);
    let l2 = l_lib.clamp(0.0, 1.0);
    let alpha = l1 / (3.0 * (1.0 + a * (1.0 - l1)));
    let beta = l2 / (3.0 * (1.0 + a * (1.0 - l2)));
    LossWeights {
        alpha,
        beta,
        gamma: 1.0 - alpha - beta,
    }
}

/// True once the warmup phase (uniform weights for the first ceil(E/2)
/// epochs) is over and per-batch adaptive weights take effect.
pub fn adaptive_phase(epoch: usize, total_epochs: usize) -> bool {
    epoch >= total_epochs.div_ceil(2)
}

/// Which objective a network trains under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Plain Dice on a one-channel network dedicated to one boundary.
    Single(Boundary),
    /// Equal-weight MAB and LIB losses.
    Dual,
    /// Equal-weight MAB, LIB and derived wall-channel losses.
    Triple,
    /// Triple loss with per-batch adaptive weights after warmup.
    AdaptiveTriple,
}

impl LossMode {
    /// Output channels a network trained under this mode needs.
    pub fn out_channels(&self) -> usize {
        match self {
            LossMode::Single(_) => 1,
            _ => 2,
        }
    }
}

/// Scalar loss, per-channel batch means, the weights that combined them and
/// the gradient with respect to the probability tensor.
pub struct BatchLoss<F: NdFloat> {
    pub total: f64,
    pub l_mab: f64,
    pub l_lib: f64,
    pub l_cvw: f64,
    pub weights: LossWeights,
    pub grad: Tensor<F>,
}

/// Unweighted per-channel batch means and gradients of a two-channel batch.
struct DualComponents<F: NdFloat> {
    l_mab: f64,
    l_lib: f64,
    l_cvw: f64,
    g_mab: Array3<F>,
    g_lib: Array3<F>,
    g_cvw_mab: Array3<F>,
    g_cvw_lib: Array3<F>,
    shape: (usize, usize, usize, usize),
}

fn check_pair<F: NdFloat>(prob: &Tensor<F>, target: &Tensor<F>, channels: usize) -> Result<()> {
    if prob.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "probability shape {:?} and target shape {:?} differ",
            prob.dim(),
            target.dim()
        )));
    }
    let (n, c, _, _) = prob.dim();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if c != channels {
        return Err(Error::Shape(format!(
            "expected {channels} channels, got {c}"
        )));
    }
    Ok(())
}

fn dual_components<F: NdFloat>(
    prob: &Tensor<F>,
    target: &Tensor<F>,
) -> Result<DualComponents<F>> {
    check_pair(prob, target, 2)?;
    let (n, _, h, w) = prob.dim();
    let inv_n = 1.0 / n as f64;
    let mut out = DualComponents {
        l_mab: 0.0,
        l_lib: 0.0,
        l_cvw: 0.0,
        g_mab: Array3::zeros((n, h, w)),
        g_lib: Array3::zeros((n, h, w)),
        g_cvw_mab: Array3::zeros((n, h, w)),
        g_cvw_lib: Array3::zeros((n, h, w)),
        shape: prob.dim(),
    };
    let scale = cast_scalar::<F>(inv_n);
    for i in 0..n {
        let pm = prob.slice(ndarray::s![i, 0, .., ..]);
        let pl = prob.slice(ndarray::s![i, 1, .., ..]);
        let tm = target.slice(ndarray::s![i, 0, .., ..]);
        let tl = target.slice(ndarray::s![i, 1, .., ..]);

        let (lm, gm) = dice_loss_grad(pm, tm);
        out.l_mab += lm * inv_n;
        out.g_mab.index_axis_mut(Axis(0), i).assign(&(gm * scale));

        let (ll, gl) = dice_loss_grad(pl, tl);
        out.l_lib += ll * inv_n;
        out.g_lib.index_axis_mut(Axis(0), i).assign(&(gl * scale));

        // Wall channel: probability ReLU(p_mab - p_lib), target mab \ lib.
        let p_cvw = derive_cvw(pm, pl);
        let t_cvw = Zip::from(&tm)
            .and(&tl)
            .map_collect(|&a, &b| a * (F::one() - b));
        let (lc, gc) = dice_loss_grad(p_cvw.view(), t_cvw.view());
        out.l_cvw += lc * inv_n;
        // Route through the ReLU: active where p_mab - p_lib > 0.
        let mut gm_route = out.g_cvw_mab.index_axis_mut(Axis(0), i);
        let mut gl_route = out.g_cvw_lib.index_axis_mut(Axis(0), i);
        Zip::from(&mut gm_route)
            .and(&mut gl_route)
            .and(&gc)
            .and(&pm)
            .and(&pl)
            .for_each(|rm, rl, &g, &a, &b| {
                if a - b > F::zero() {
                    let g = g * scale;
                    *rm = g;
                    *rl = -g;
                }
            });
    }
    Ok(out)
}

fn assemble<F: NdFloat>(c: DualComponents<F>, weights: LossWeights) -> BatchLoss<F> {
    let total = weights.alpha * c.l_mab + weights.beta * c.l_lib + weights.gamma * c.l_cvw;
    let (n, _, h, w) = c.shape;
    let alpha = cast_scalar::<F>(weights.alpha);
    let beta = cast_scalar::<F>(weights.beta);
    let gamma = cast_scalar::<F>(weights.gamma);
    let mut grad = Array4::zeros(c.shape);
    for i in 0..n {
        for r in 0..h {
            for cc in 0..w {
                grad[[i, 0, r, cc]] =
                    alpha * c.g_mab[[i, r, cc]] + gamma * c.g_cvw_mab[[i, r, cc]];
                grad[[i, 1, r, cc]] =
                    beta * c.g_lib[[i, r, cc]] + gamma * c.g_cvw_lib[[i, r, cc]];
            }
        }
    }
    BatchLoss {
        total,
        l_mab: c.l_mab,
        l_lib: c.l_lib,
        l_cvw: c.l_cvw,
        weights,
        grad,
    }
}

/// Two-channel batch loss under explicit weights (weights are constants of
/// the differentiation).
pub fn weighted_batch_loss<F: NdFloat>(
    prob: &Tensor<F>,
    target: &Tensor<F>,
    weights: LossWeights,
) -> Result<BatchLoss<F>> {
    Ok(assemble(dual_components(prob, target)?, weights))
}

/// One-channel batch loss for a dedicated single-boundary network.
pub fn single_batch_loss<F: NdFloat>(
    prob: &Tensor<F>,
    target: &Tensor<F>,
    boundary: Boundary,
) -> Result<BatchLoss<F>> {
    check_pair(prob, target, 1)?;
    let n = prob.dim().0;
    let inv_n = 1.0 / n as f64;
    let scale = cast_scalar::<F>(inv_n);
    let mut total = 0.0;
    let mut grad = Array4::zeros(prob.dim());
    for i in 0..n {
        let (l, g) = dice_loss_grad(
            prob.slice(ndarray::s![i, 0, .., ..]),
            target.slice(ndarray::s![i, 0, .., ..]),
        );
        total += l * inv_n;
        grad.slice_mut(ndarray::s![i, 0, .., ..]).assign(&(g * scale));
    }
    let (l_mab, l_lib) = match boundary {
        Boundary::Mab => (total, 0.0),
        Boundary::Lib => (0.0, total),
    };
    Ok(BatchLoss {
        total,
        l_mab,
        l_lib,
        l_cvw: 0.0,
        weights: LossWeights {
            alpha: if boundary == Boundary::Mab { 1.0 } else { 0.0 },
            beta: if boundary == Boundary::Lib { 1.0 } else { 0.0 },
            gamma: 0.0,
        },
        grad,
    })
}

/// Mode dispatch plus the adaptive parameter `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: LossMode,
    /// Steepness parameter of the adaptive weight formula.
    pub adaptive_a: f64,
}

impl Objective {
    pub fn new(mode: LossMode, adaptive_a: f64) -> Self {
        Self { mode, adaptive_a }
    }

    /// Evaluates the batch loss and its gradient for the epoch's phase.
    pub fn evaluate<F: NdFloat>(
        &self,
        prob: &Tensor<F>,
        target: &Tensor<F>,
        epoch: usize,
        total_epochs: usize,
    ) -> Result<BatchLoss<F>> {
        match self.mode {
            LossMode::Single(boundary) => single_batch_loss(prob, target, boundary),
            LossMode::Dual => weighted_batch_loss(prob, target, LossWeights::dual()),
            LossMode::Triple => weighted_batch_loss(prob, target, LossWeights::uniform()),
            LossMode::AdaptiveTriple => {
                let components = dual_components(prob, target)?;
                let weights = if adaptive_phase(epoch, total_epochs) {
                    atdl_weights(components.l_mab, components.l_lib, self.adaptive_a)
                } else {
                    LossWeights::uniform()
                };
                Ok(assemble(components, weights))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{s, Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk_target(h: usize, w: usize, r: f64) -> Array2<f64> {
        let mut t = Array2::zeros((h, w));
        let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
        for i in 0..h {
            for j in 0..w {
                if ((i as f64 - cr).powi(2) + (j as f64 - cc).powi(2)).sqrt() <= r {
                    t[[i, j]] = 1.0;
                }
            }
        }
        t
    }

    #[test]
    fn dice_loss_reference_values() {
        let t = disk_target(8, 8, 2.5);
        assert!(dice_loss(t.view(), t.view()) < 1e-6);
        let empty = Array2::<f64>::zeros((8, 8));
        assert_eq!(dice_loss(empty.view(), empty.view()), 0.0);
        let full = Array2::<f64>::ones((8, 8));
        assert!(dice_loss(full.view(), empty.view()) > 0.9999);
        // Hand value: y = [1, 0], yhat = [0.5, 0.5] -> 1 - 1.000001/2.000001.
        let y = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let p = Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(dice_loss(p.view(), y.view()), 0.5, epsilon = 1e-5);
    }

    #[test]
    fn derived_wall_probability_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let mab = Array2::<f64>::from_shape_simple_fn((12, 9), || rng.random_range(0.0..=1.0));
            let lib = Array2::<f64>::from_shape_simple_fn((12, 9), || rng.random_range(0.0..=1.0));
            let wall = derive_cvw(mab.view(), lib.view());
            Zip::from(&wall).and(&mab).and(&lib).for_each(|&w, &m, &l| {
                assert!((0.0..=1.0).contains(&w), "wall probability {w} out of range");
                assert!(w <= m, "wall {w} exceeds outer boundary {m}");
                assert_eq!(w, (m - l).max(0.0));
            });
        }
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = disk_target(8, 8, 3.0);
        let prob = Array2::from_shape_simple_fn((8, 8), || rng.random_range(0.05..0.95));
        let (_, grad) = dice_loss_grad(prob.view(), target.view());
        let h = 1e-7;
        for &(r, c) in &[(0usize, 0usize), (4, 4), (3, 6), (7, 7), (2, 1)] {
            let mut pp = prob.clone();
            let mut pm = prob.clone();
            pp[[r, c]] += h;
            pm[[r, c]] -= h;
            let numeric =
                (dice_loss(pp.view(), target.view()) - dice_loss(pm.view(), target.view()))
                    / (2.0 * h);
            assert_abs_diff_eq!(grad[[r, c]], numeric, epsilon = 1e-6);
        }
    }

    #[test]
    fn adaptive_weights_match_hand_values() {
        let w = atdl_weights(0.5, 0.5, 0.5);
        assert_abs_diff_eq!(w.alpha, 2.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.beta, 2.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.gamma, 11.0 / 15.0, epsilon = 1e-12);
        let w = atdl_weights(0.1, 0.2, 0.5);
        assert_abs_diff_eq!(w.alpha, 0.0229885057471264, epsilon = 1e-10);
        assert_abs_diff_eq!(w.beta, 0.0476190476190476, epsilon = 1e-10);
        assert_abs_diff_eq!(w.gamma, 0.9293924466338260, epsilon = 1e-10);
    }

    #[test]
    fn adaptive_weight_properties_hold_on_a_grid() {
        for &a in &[0.0, 0.5, 2.0] {
            let mut prev_alpha = -1.0;
            for i in 0..=20 {
                let l1 = i as f64 / 20.0;
                for j in 0..=20 {
                    let l2 = j as f64 / 20.0;
                    let w = atdl_weights(l1, l2, a);
                    assert!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0);
                    assert_abs_diff_eq!(w.alpha + w.beta + w.gamma, 1.0, epsilon = 1e-12);
                    assert!(
                        w.gamma >= 1.0 / 3.0 - 1e-12,
                        "gamma {} below 1/3 at ({l1},{l2},{a})",
                        w.gamma
                    );
                }
                // alpha is monotone increasing in its own loss.
                let alpha = atdl_weights(l1, 0.5, a).alpha;
                assert!(alpha > prev_alpha);
                prev_alpha = alpha;
            }
            assert_eq!(atdl_weights(0.0, 0.7, a).alpha, 0.0);
            assert_abs_diff_eq!(atdl_weights(1.0, 0.7, a).alpha, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn warmup_phase_covers_first_half_of_training() {
        assert!(!adaptive_phase(0, 50));
        assert!(!adaptive_phase(24, 50));
        assert!(adaptive_phase(25, 50));
        assert!(adaptive_phase(49, 50));
        // Odd epoch count rounds the warmup up.
        assert!(!adaptive_phase(3, 7));
        assert!(adaptive_phase(4, 7));
    }

    /// Two-channel batch with probabilities kept away from the ReLU kink so
    /// finite differences are well posed.
    fn random_dual_batch(seed: u64) -> (Array4<f64>, Array4<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, h, w) = (2, 8, 8);
        let mut prob = Array4::zeros((n, 2, h, w));
        let mut target = Array4::zeros((n, 2, h, w));
        for i in 0..n {
            let tm = disk_target(h, w, 3.0);
            let tl = disk_target(h, w, 1.8);
            target.slice_mut(s![i, 0, .., ..]).assign(&tm);
            target.slice_mut(s![i, 1, .., ..]).assign(&tl);
            for r in 0..h {
                for c in 0..w {
                    // Either clearly mab > lib or clearly lib > mab.
                    if rng.random_bool(0.7) {
                        prob[[i, 0, r, c]] = rng.random_range(0.55..0.95);
                        prob[[i, 1, r, c]] = rng.random_range(0.05..0.45);
                    } else {
                        prob[[i, 0, r, c]] = rng.random_range(0.05..0.40);
                        prob[[i, 1, r, c]] = rng.random_range(0.50..0.95);
                    }
                }
            }
        }
        (prob, target)
    }

    fn check_grad_against_fixed_weight_loss(
        prob: &Array4<f64>,
        target: &Array4<f64>,
        loss: &BatchLoss<f64>,
    ) {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..24 {
            let i = rng.random_range(0..prob.dim().0);
            let c = rng.random_range(0..prob.dim().1);
            let r = rng.random_range(0..prob.dim().2);
            let cc = rng.random_range(0..prob.dim().3);
            let mut pp = prob.clone();
            let mut pm = prob.clone();
            pp[[i, c, r, cc]] += h;
            pm[[i, c, r, cc]] -= h;
            let lp = weighted_batch_loss(&pp, target, loss.weights).unwrap().total;
            let lm = weighted_batch_loss(&pm, target, loss.weights).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = loss.grad[[i, c, r, cc]];
            assert!(
                (numeric - analytic).abs() <= 1e-4 * (1.0 + numeric.abs()),
                "at [{i},{c},{r},{cc}]: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn dual_and_triple_gradients_match_finite_differences() {
        let (prob, target) = random_dual_batch(7);
        for mode in [LossMode::Dual, LossMode::Triple] {
            let objective = Objective::new(mode, 0.5);
            let loss = objective.evaluate(&prob, &target, 0, 10).unwrap();
            assert!(loss.total > 0.0 && loss.total < 1.0);
            check_grad_against_fixed_weight_loss(&prob, &target, &loss);
        }
    }

    #[test]
    fn adaptive_triple_gradient_treats_weights_as_constants() {
        let (prob, target) = random_dual_batch(13);
        let objective = Objective::new(LossMode::AdaptiveTriple, 0.5);
        // Epoch in the adaptive phase: weights derived from this batch.
        let loss = objective.evaluate(&prob, &target, 9, 10).unwrap();
        assert!(loss.weights.gamma >= 1.0 / 3.0 - 1e-12);
        let expect = atdl_weights(loss.l_mab, loss.l_lib, 0.5);
        assert_abs_diff_eq!(loss.weights.alpha, expect.alpha, epsilon = 1e-12);
        // Finite differences of the loss with those weights held fixed.
        check_grad_against_fixed_weight_loss(&prob, &target, &loss);
    }

    #[test]
    fn adaptive_mode_is_uniform_during_warmup() {
        let (prob, target) = random_dual_batch(17);
        let objective = Objective::new(LossMode::AdaptiveTriple, 0.5);
        let warm = objective.evaluate(&prob, &target, 0, 10).unwrap();
        assert_eq!(warm.weights, LossWeights::uniform());
        let triple = Objective::new(LossMode::Triple, 0.5)
            .evaluate(&prob, &target, 0, 10)
            .unwrap();
        assert_abs_diff_eq!(warm.total, triple.total, epsilon = 1e-12);
    }

    #[test]
    fn single_boundary_gradient_and_reporting() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let target = disk_target(8, 8, 3.0);
        let mut t4 = Array4::zeros((2, 1, 8, 8));
        t4.slice_mut(s![0, 0, .., ..]).assign(&target);
        t4.slice_mut(s![1, 0, .., ..]).assign(&target);
        let prob = Array4::from_shape_simple_fn((2, 1, 8, 8), || rng.random_range(0.05..0.95));
        let loss = single_batch_loss(&prob, &t4, Boundary::Lib).unwrap();
        assert_eq!(loss.l_mab, 0.0);
        assert_abs_diff_eq!(loss.l_lib, loss.total, epsilon = 1e-15);
        let h = 1e-6;
        for &(i, r, c) in &[(0usize, 2usize, 3usize), (1, 7, 0), (1, 4, 4)] {
            let mut pp = prob.clone();
            let mut pm = prob.clone();
            pp[[i, 0, r, c]] += h;
            pm[[i, 0, r, c]] -= h;
            let lp = single_batch_loss(&pp, &t4, Boundary::Lib).unwrap().total;
            let lm = single_batch_loss(&pm, &t4, Boundary::Lib).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            assert_abs_diff_eq!(loss.grad[[i, 0, r, c]], numeric, epsilon = 1e-6);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let prob = Array4::<f64>::zeros((1, 2, 8, 8));
        let target = Array4::<f64>::zeros((1, 2, 8, 4));
        assert!(weighted_batch_loss(&prob, &target, LossWeights::uniform()).is_err());
        let single = Array4::<f64>::zeros((1, 1, 8, 8));
        assert!(weighted_batch_loss(&single, &single, LossWeights::uniform()).is_err());
        assert!(single_batch_loss(&prob, &prob, Boundary::Mab).is_err());
    }

    #[test]
    fn perfect_dual_prediction_has_near_zero_loss_everywhere() {
        let (_, target) = random_dual_batch(31);
        let loss = weighted_batch_loss(&target.clone(), &target, LossWeights::uniform()).unwrap();
        assert!(loss.total < 1e-5, "total {}", loss.total);
        assert!(loss.l_cvw < 1e-5, "cvw {}", loss.l_cvw);
    }
}
