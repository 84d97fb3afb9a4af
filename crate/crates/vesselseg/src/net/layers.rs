//! Differentiable layer primitives for the segmentation network.
//!
//! All layers operate on NCHW tensors (`Array4`), are generic over the float
//! type (training runs in f32, gradient checks in f64), and keep whatever
//! they need for the backward pass in an internal cache filled by the last
//! training-mode forward call. Convolutions are evaluated as matrix products
//! on im2col patch matrices so the heavy lifting happens inside optimized
//! GEMM kernels.

use ndarray::{s, Array1, Array2, Array4, ArrayView3, Axis, NdFloat, Zip};
use num_traits::NumCast;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Batch of feature maps, laid out [batch, channel, row, col].
pub type Tensor<F> = Array4<F>;

fn cast<F: NdFloat>(v: f64) -> F {
    F::from(v).expect("finite f64 fits every float type")
}

/// He (fan-in) initialized weight tensor: N(0, sqrt(2 / fan_in)).
fn he_normal<F: NdFloat, R: Rng>(
    shape: (usize, usize, usize, usize),
    fan_in: usize,
    rng: &mut R,
) -> Array4<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = StandardNormal;
    Array4::from_shape_simple_fn(shape, || {
        let z: f64 = normal.sample(rng);
        cast(z * std)
    })
}

/// Lays out every kxk patch of one sample as a column: output is
/// [channels*k*k, rows*cols] with zero padding outside the frame.
fn im2col<F: NdFloat>(x: &ArrayView3<'_, F>, k: usize, pad: usize) -> Array2<F> {
    let (ch, h, w) = x.dim();
    let mut col = Array2::zeros((ch * k * k, h * w));
    for c in 0..ch {
        for dr in 0..k {
            let r_lo = pad.saturating_sub(dr);
            let r_hi = (h + pad).saturating_sub(dr).min(h);
            for dc in 0..k {
                let row_idx = (c * k + dr) * k + dc;
                let c_lo = pad.saturating_sub(dc);
                let c_hi = (w + pad).saturating_sub(dc).min(w);
                if c_lo >= c_hi {
                    continue;
                }
                let mut dst = col.row_mut(row_idx);
                for r in r_lo..r_hi {
                    let sr = r + dr - pad;
                    let src = x.slice(s![c, sr, (c_lo + dc - pad)..(c_hi + dc - pad)]);
                    dst.slice_mut(s![r * w + c_lo..r * w + c_hi]).assign(&src);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch-matrix gradients back onto the
/// input gradient of one sample.
fn col2im_add<F: NdFloat>(
    dcol: &Array2<F>,
    dx: &mut ndarray::ArrayViewMut3<'_, F>,
    k: usize,
    pad: usize,
) {
    let (ch, h, w) = dx.dim();
    for c in 0..ch {
        for dr in 0..k {
            let r_lo = pad.saturating_sub(dr);
            let r_hi = (h + pad).saturating_sub(dr).min(h);
            for dc in 0..k {
                let row_idx = (c * k + dr) * k + dc;
                let c_lo = pad.saturating_sub(dc);
                let c_hi = (w + pad).saturating_sub(dc).min(w);
                if c_lo >= c_hi {
                    continue;
                }
                let src_row = dcol.row(row_idx);
                for r in r_lo..r_hi {
                    let sr = r + dr - pad;
                    let mut dst = dx.slice_mut(s![c, sr, (c_lo + dc - pad)..(c_hi + dc - pad)]);
                    dst += &src_row.slice(s![r * w + c_lo..r * w + c_hi]);
                }
            }
        }
    }
}

/// 2D convolution with square kernel, stride 1 and symmetric zero padding
/// that preserves the spatial size (pad = (k-1)/2 for odd k).
pub struct Conv2d<F: NdFloat> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub weight_grad: Array4<F>,
    pub bias_grad: Array1<F>,
    kernel: usize,
    pad: usize,
    cache: Option<Tensor<F>>,
}

impl<F: NdFloat> Conv2d<F> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "square kernels must have odd size");
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: he_normal((out_ch, in_ch, kernel, kernel), fan_in, rng),
            bias: Array1::zeros(out_ch),
            weight_grad: Array4::zeros((out_ch, in_ch, kernel, kernel)),
            bias_grad: Array1::zeros(out_ch),
            kernel,
            pad: (kernel - 1) / 2,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let (n, ic, h, w) = x.dim();
        let (oc, wic, k, _) = self.weight.dim();
        assert_eq!(ic, wic, "input channels mismatch");
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((oc, ic * k * k))
            .expect("weights are contiguous");
        let mut y = Array4::zeros((n, oc, h, w));
        for i in 0..n {
            let col = im2col(&x.index_axis(Axis(0), i), self.kernel, self.pad);
            let out = w_mat.dot(&col);
            let mut dst = y.index_axis_mut(Axis(0), i);
            let mut dst = dst
                .view_mut()
                .into_shape_with_order((oc, h * w))
                .expect("contiguous");
            dst.assign(&out);
            for (mut row, &b) in dst.outer_iter_mut().zip(self.bias.iter()) {
                row += b;
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let x = self.cache.take().expect("backward without forward");
        let (n, ic, h, w) = x.dim();
        let (oc, _, k, _) = self.weight.dim();
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((oc, ic * k * k))
            .expect("contiguous");
        let mut dw_mat = Array2::<F>::zeros((oc, ic * k * k));
        let mut dx = Array4::zeros((n, ic, h, w));
        for i in 0..n {
            let col = im2col(&x.index_axis(Axis(0), i), self.kernel, self.pad);
            let dy_mat = dy
                .index_axis(Axis(0), i)
                .into_shape_with_order((oc, h * w))
                .expect("contiguous");
            dw_mat = dw_mat + dy_mat.dot(&col.t());
            let dcol = w_mat.t().dot(&dy_mat);
            col2im_add(&dcol, &mut dx.index_axis_mut(Axis(0), i), self.kernel, self.pad);
            for (c, row) in dy_mat.outer_iter().enumerate() {
                self.bias_grad[c] = self.bias_grad[c] + row.sum();
            }
        }
        self.weight_grad += &dw_mat
            .into_shape_with_order((oc, ic, k, k))
            .expect("contiguous");
        dx
    }
}

struct BnCache<F: NdFloat> {
    xhat: Tensor<F>,
    inv_std: Array1<F>,
}

/// Per-channel batch normalization with running statistics for evaluation.
///
/// Training normalizes with the biased batch variance and updates running
/// estimates with momentum 0.1 (unbiased variance, following common
/// practice); evaluation normalizes with the stored running statistics.
pub struct BatchNorm2d<F: NdFloat> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub gamma_grad: Array1<F>,
    pub beta_grad: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    momentum: F,
    eps: F,
    cache: Option<BnCache<F>>,
}

impl<F: NdFloat> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            gamma_grad: Array1::zeros(channels),
            beta_grad: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: cast(0.1),
            eps: cast(1e-5),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let (n, ch, h, w) = x.dim();
        assert_eq!(ch, self.gamma.len(), "channel mismatch");
        let m = cast::<F>((n * h * w) as f64);
        let mut y = Array4::zeros(x.raw_dim());
        if train {
            let mut xhat = Array4::zeros(x.raw_dim());
            let mut inv_std = Array1::zeros(ch);
            for c in 0..ch {
                let xc = x.index_axis(Axis(1), c);
                let mean = xc.sum() / m;
                let var = xc.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
                let istd = F::one() / (var + self.eps).sqrt();
                inv_std[c] = istd;
                let one = F::one();
                self.running_mean[c] =
                    (one - self.momentum) * self.running_mean[c] + self.momentum * mean;
                let unbias = if n * h * w > 1 {
                    var * m / (m - one)
                } else {
                    var
                };
                self.running_var[c] =
                    (one - self.momentum) * self.running_var[c] + self.momentum * unbias;
                let gamma = self.gamma[c];
                let beta = self.beta[c];
                Zip::from(xhat.index_axis_mut(Axis(1), c))
                    .and(y.index_axis_mut(Axis(1), c))
                    .and(xc)
                    .for_each(|xh, yv, &xv| {
                        let norm = (xv - mean) * istd;
                        *xh = norm;
                        *yv = gamma * norm + beta;
                    });
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for c in 0..ch {
                let mean = self.running_mean[c];
                let istd = F::one() / (self.running_var[c] + self.eps).sqrt();
                let gamma = self.gamma[c];
                let beta = self.beta[c];
                Zip::from(y.index_axis_mut(Axis(1), c))
                    .and(x.index_axis(Axis(1), c))
                    .for_each(|yv, &xv| *yv = gamma * (xv - mean) * istd + beta);
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("backward without forward");
        let (n, ch, h, w) = dy.dim();
        let m = cast::<F>((n * h * w) as f64);
        let mut dx = Array4::zeros(dy.raw_dim());
        for c in 0..ch {
            let dyc = dy.index_axis(Axis(1), c);
            let xhc = xhat.index_axis(Axis(1), c);
            let sum_dy = dyc.sum();
            let sum_dy_xhat = Zip::from(dyc).and(xhc).fold(F::zero(), |acc, &d, &xh| {
                acc + d * xh
            });
            self.beta_grad[c] = self.beta_grad[c] + sum_dy;
            self.gamma_grad[c] = self.gamma_grad[c] + sum_dy_xhat;
            let scale = self.gamma[c] * inv_std[c] / m;
            Zip::from(dx.index_axis_mut(Axis(1), c))
                .and(dyc)
                .and(xhc)
                .for_each(|dxv, &d, &xh| {
                    *dxv = scale * (m * d - sum_dy - xh * sum_dy_xhat);
                });
        }
        dx
    }
}

/// 2x2 max pooling with stride 2; caches the winning position per window.
pub struct MaxPool2d {
    cache: Option<Array4<u8>>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward<F: NdFloat>(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let (n, ch, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::zeros((n, ch, oh, ow));
        let mut arg = Array4::zeros((n, ch, oh, ow));
        for i in 0..n {
            for c in 0..ch {
                for r in 0..oh {
                    for cc in 0..ow {
                        let mut best = x[[i, c, 2 * r, 2 * cc]];
                        let mut idx = 0u8;
                        for (j, (dr, dc)) in
                            [(0usize, 1usize), (1, 0), (1, 1)].iter().enumerate()
                        {
                            let v = x[[i, c, 2 * r + dr, 2 * cc + dc]];
                            if v > best {
                                best = v;
                                idx = j as u8 + 1;
                            }
                        }
                        y[[i, c, r, cc]] = best;
                        arg[[i, c, r, cc]] = idx;
                    }
                }
            }
        }
        if train {
            self.cache = Some(arg);
        }
        y
    }

    pub fn backward<F: NdFloat>(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let arg = self.cache.take().expect("backward without forward");
        let (n, ch, oh, ow) = dy.dim();
        let mut dx = Array4::zeros((n, ch, oh * 2, ow * 2));
        for i in 0..n {
            for c in 0..ch {
                for r in 0..oh {
                    for cc in 0..ow {
                        let idx = arg[[i, c, r, cc]] as usize;
                        let (dr, dc) = (idx / 2, idx % 2);
                        dx[[i, c, 2 * r + dr, 2 * cc + dc]] = dy[[i, c, r, cc]];
                    }
                }
            }
        }
        dx
    }
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self::new()
    }
}

/// 2x2 transposed convolution with stride 2: doubles the spatial size with
/// non-overlapping output blocks, so it reduces to a single matrix product.
pub struct ConvTranspose2d<F: NdFloat> {
    /// Laid out [in_ch, out_ch, 2, 2].
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub weight_grad: Array4<F>,
    pub bias_grad: Array1<F>,
    cache: Option<Tensor<F>>,
}

impl<F: NdFloat> ConvTranspose2d<F> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * 4;
        Self {
            weight: he_normal((in_ch, out_ch, 2, 2), fan_in, rng),
            bias: Array1::zeros(out_ch),
            weight_grad: Array4::zeros((in_ch, out_ch, 2, 2)),
            bias_grad: Array1::zeros(out_ch),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let (n, ic, h, w) = x.dim();
        let (wic, oc, _, _) = self.weight.dim();
        assert_eq!(ic, wic, "input channels mismatch");
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((ic, oc * 4))
            .expect("contiguous");
        let mut y = Array4::zeros((n, oc, 2 * h, 2 * w));
        for i in 0..n {
            let x_mat = x
                .index_axis(Axis(0), i)
                .into_shape_with_order((ic, h * w))
                .expect("contiguous");
            let out = w_mat.t().dot(&x_mat); // [oc*4, h*w]
            for c in 0..oc {
                for (j, (dr, dc)) in
                    [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                {
                    let src = out.row(c * 4 + j);
                    let b = self.bias[c];
                    for r in 0..h {
                        let mut dst = y.slice_mut(s![
                            i,
                            c,
                            2 * r + dr,
                            *dc..2 * w;2
                        ]);
                        Zip::from(&mut dst)
                            .and(src.slice(s![r * w..(r + 1) * w]))
                            .for_each(|d, &s| *d = s + b);
                    }
                }
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let x = self.cache.take().expect("backward without forward");
        let (n, ic, h, w) = x.dim();
        let (_, oc, _, _) = self.weight.dim();
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((ic, oc * 4))
            .expect("contiguous");
        let mut dw_mat = Array2::<F>::zeros((ic, oc * 4));
        let mut dx = Array4::zeros((n, ic, h, w));
        for i in 0..n {
            // Gather the strided output gradient into [oc*4, h*w].
            let mut dy_g = Array2::<F>::zeros((oc * 4, h * w));
            for c in 0..oc {
                for (j, (dr, dc)) in
                    [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                {
                    let mut dst = dy_g.row_mut(c * 4 + j);
                    for r in 0..h {
                        let src = dy.slice(s![i, c, 2 * r + dr, *dc..2 * w;2]);
                        dst.slice_mut(s![r * w..(r + 1) * w]).assign(&src);
                    }
                    self.bias_grad[c] = self.bias_grad[c] + dst.sum();
                }
            }
            let x_mat = x
                .index_axis(Axis(0), i)
                .into_shape_with_order((ic, h * w))
                .expect("contiguous");
            dw_mat = dw_mat + x_mat.dot(&dy_g.t());
            let dx_mat = w_mat.dot(&dy_g);
            dx.index_axis_mut(Axis(0), i)
                .into_shape_with_order((ic, h * w))
                .expect("contiguous")
                .assign(&dx_mat);
        }
        self.weight_grad += &dw_mat
            .into_shape_with_order((ic, oc, 2, 2))
            .expect("contiguous");
        dx
    }
}

/// Rectified linear activation.
pub struct Relu<F: NdFloat> {
    cache: Option<Tensor<F>>,
}

impl<F: NdFloat> Relu<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
        if train {
            let mask = x.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
            self.cache = Some(mask);
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let mask = self.cache.take().expect("backward without forward");
        dy * &mask
    }
}

impl<F: NdFloat> Default for Relu<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Logistic activation mapping scores to probabilities.
pub struct Sigmoid<F: NdFloat> {
    cache: Option<Tensor<F>>,
}

impl<F: NdFloat> Sigmoid<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let y = x.mapv(|v| {
            if v >= F::zero() {
                F::one() / (F::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (F::one() + e)
            }
        });
        if train {
            self.cache = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let y = self.cache.take().expect("backward without forward");
        Zip::from(dy).and(&y).map_collect(|&d, &p| d * p * (F::one() - p))
    }
}

impl<F: NdFloat> Default for Sigmoid<F> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn cast_scalar<F: NdFloat>(v: f64) -> F {
    cast(v)
}

pub(crate) fn to_f64<F: NdFloat>(v: F) -> f64 {
    <f64 as NumCast>::from(v).expect("float converts to f64")
}
