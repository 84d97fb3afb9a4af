//! Encoder-decoder segmentation network with skip connections.
//!
//! The network maps a single-channel image to per-pixel boundary
//! probabilities through a U-shaped topology: repeated double 3x3
//! convolution blocks (each convolution followed by batch normalization and
//! ReLU), 2x2 max pooling on the way down, 2x2 stride-2 transposed
//! convolutions plus channel concatenation with the matching encoder output
//! on the way up, and a 1x1 convolution head with a sigmoid. Two output
//! channels carry the outer (MAB) and inner (LIB) boundary probabilities;
//! single-boundary variants use one.

pub mod adam;
pub mod layers;

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use adam::{Adam, AdamConfig};
use layers::{to_f64, BatchNorm2d, Conv2d, ConvTranspose2d, MaxPool2d, Relu, Sigmoid};
pub use layers::Tensor;

/// Filename of the raw little-endian f32 weight blob inside a checkpoint.
pub const WEIGHTS_FILE: &str = "weights.bin";
/// Filename of the JSON manifest inside a checkpoint.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Expected (rows, cols) of training inputs; must be divisible by
    /// 2^depth so every pooling stage halves cleanly.
    pub input_size: (usize, usize),
    /// Number of pooling stages between input and bottleneck.
    pub depth: usize,
    /// Channel count of the first encoder level.
    pub base_channels: usize,
    /// Multiplier applied to the channel count at each deeper level.
    pub channel_growth: usize,
    /// Insert batch normalization between every convolution and ReLU.
    pub batch_norm: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 320),
            depth: 4,
            base_channels: 64,
            channel_growth: 2,
            batch_norm: true,
            in_channels: 1,
            out_channels: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 6 {
            return Err(Error::Config(format!(
                "network depth must be in 1..=6, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.channel_growth == 0 {
            return Err(Error::Config(
                "base_channels and channel_growth must be positive".into(),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(
                "in_channels and out_channels must be positive".into(),
            ));
        }
        let div = 1usize << self.depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }

    /// Channel count at encoder level `i` (level `depth` is the bottleneck).
    fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_growth.pow(level as u32)
    }
}

/// 64-bit FNV-1a digest rendered as hex; used to fingerprint configurations.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Checkpoint sidecar describing what the weight blob contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub net: NetConfig,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub scalar_count: usize,
    pub loss_history: Vec<f64>,
    pub val_dice_history: Vec<f64>,
}

/// Convolution -> optional batch norm -> ReLU.
struct ConvBlock<F: NdFloat> {
    conv: Conv2d<F>,
    bn: Option<BatchNorm2d<F>>,
    relu: Relu<F>,
}

impl<F: NdFloat> ConvBlock<F> {
    fn new(in_ch: usize, out_ch: usize, batch_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(in_ch, out_ch, 3, rng),
            bn: batch_norm.then(|| BatchNorm2d::new(out_ch)),
            relu: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let y = self.conv.forward(x, train);
        let y = match &mut self.bn {
            Some(bn) => bn.forward(&y, train),
            None => y,
        };
        self.relu.forward(&y, train)
    }

    fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let dy = self.relu.backward(dy);
        let dy = match &mut self.bn {
            Some(bn) => bn.backward(&dy),
            None => dy,
        };
        self.conv.backward(&dy)
    }

    fn params_and_grads(&mut self) -> Vec<(&mut [F], &mut [F])> {
        let mut out = vec![
            (
                self.conv.weight.as_slice_mut().expect("standard layout"),
                self.conv.weight_grad.as_slice_mut().expect("standard layout"),
            ),
            (
                self.conv.bias.as_slice_mut().expect("standard layout"),
                self.conv.bias_grad.as_slice_mut().expect("standard layout"),
            ),
        ];
        if let Some(bn) = &mut self.bn {
            out.push((
                bn.gamma.as_slice_mut().expect("standard layout"),
                bn.gamma_grad.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                bn.beta.as_slice_mut().expect("standard layout"),
                bn.beta_grad.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }

    /// Every persisted tensor: parameters plus batch-norm running statistics.
    fn state_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = vec![
            self.conv.weight.as_slice_mut().expect("standard layout"),
            self.conv.bias.as_slice_mut().expect("standard layout"),
        ];
        if let Some(bn) = &mut self.bn {
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
            out.push(bn.running_mean.as_slice_mut().expect("standard layout"));
            out.push(bn.running_var.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// Two stacked convolution blocks with a shared output width.
struct DoubleConv<F: NdFloat> {
    first: ConvBlock<F>,
    second: ConvBlock<F>,
}

impl<F: NdFloat> DoubleConv<F> {
    fn new(in_ch: usize, out_ch: usize, batch_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBlock::new(in_ch, out_ch, batch_norm, rng),
            second: ConvBlock::new(out_ch, out_ch, batch_norm, rng),
        }
    }

    fn forward(&mut self, x: &Tensor<F>, train: bool) -> Tensor<F> {
        let y = self.first.forward(x, train);
        self.second.forward(&y, train)
    }

    fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let dy = self.second.backward(dy);
        self.first.backward(&dy)
    }

    fn params_and_grads(&mut self) -> Vec<(&mut [F], &mut [F])> {
        let mut out = self.first.params_and_grads();
        out.extend(self.second.params_and_grads());
        out
    }

    fn state_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = self.first.state_mut();
        out.extend(self.second.state_mut());
        out
    }
}

/// The full segmentation network. Generic over the float type so training
/// runs in f32 while gradient verification runs in f64.
pub struct UNet<F: NdFloat> {
    config: NetConfig,
    seed: u64,
    encoders: Vec<DoubleConv<F>>,
    pools: Vec<MaxPool2d>,
    bottleneck: DoubleConv<F>,
    ups: Vec<ConvTranspose2d<F>>,
    decoders: Vec<DoubleConv<F>>,
    head: Conv2d<F>,
    sigmoid: Sigmoid<F>,
}

impl<F: NdFloat> UNet<F> {
    /// Builds a freshly He-initialized network; identical seeds produce
    /// identical weights.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = config.depth;
        let bn = config.batch_norm;
        let mut encoders = Vec::with_capacity(depth);
        let mut pools = Vec::with_capacity(depth);
        for level in 0..depth {
            let in_ch = if level == 0 {
                config.in_channels
            } else {
                config.channels(level - 1)
            };
            encoders.push(DoubleConv::new(in_ch, config.channels(level), bn, &mut rng));
            pools.push(MaxPool2d::new());
        }
        let bottleneck = DoubleConv::new(
            config.channels(depth - 1),
            config.channels(depth),
            bn,
            &mut rng,
        );
        let mut ups = Vec::with_capacity(depth);
        let mut decoders = Vec::with_capacity(depth);
        for level in 0..depth {
            ups.push(ConvTranspose2d::new(
                config.channels(level + 1),
                config.channels(level),
                &mut rng,
            ));
            decoders.push(DoubleConv::new(
                2 * config.channels(level),
                config.channels(level),
                bn,
                &mut rng,
            ));
        }
        let head = Conv2d::new(config.channels(0), config.out_channels, 1, &mut rng);
        Ok(Self {
            config,
            seed,
            encoders,
            pools,
            bottleneck,
            ups,
            decoders,
            head,
            sigmoid: Sigmoid::new(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> String {
        let blob = serde_json::to_vec(&self.config).expect("config serializes");
        fingerprint(&blob)
    }

    fn check_input(&self, dim: (usize, usize, usize, usize)) -> Result<()> {
        let (_, c, h, w) = dim;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let div = 1usize << self.config.depth;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }

    /// Runs the network, producing per-pixel probabilities in [0, 1].
    /// Training mode uses batch statistics and caches activations for
    /// [`UNet::backward`]; evaluation mode uses running statistics.
    pub fn forward(&mut self, x: &Tensor<F>, train: bool) -> Result<Tensor<F>> {
        self.check_input(x.dim())?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for level in 0..depth {
            let encoded = self.encoders[level].forward(&cur, train);
            cur = self.pools[level].forward(&encoded, train);
            skips.push(encoded);
        }
        cur = self.bottleneck.forward(&cur, train);
        for level in (0..depth).rev() {
            let up = self.ups[level].forward(&cur, train);
            let cat = concatenate(Axis(1), &[skips[level].view(), up.view()])
                .expect("skip and upsampled maps share spatial shape");
            cur = self.decoders[level].forward(&cat, train);
        }
        let logits = self.head.forward(&cur, train);
        Ok(self.sigmoid.forward(&logits, train))
    }

    /// Convenience wrapper for evaluation-mode forward.
    pub fn predict(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.forward(x, false)
    }

    /// Backpropagates the gradient of a scalar loss with respect to the
    /// output probabilities; accumulates parameter gradients and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, dprob: &Tensor<F>) -> Tensor<F> {
        let depth = self.config.depth;
        let dlogits = self.sigmoid.backward(dprob);
        let mut dcur = self.head.backward(&dlogits);
        let mut dskips: Vec<Option<Tensor<F>>> = (0..depth).map(|_| None).collect();
        for level in 0..depth {
            let dcat = self.decoders[level].backward(&dcur);
            let split = self.config.channels(level);
            let dskip = dcat.slice(s![.., ..split, .., ..]).to_owned();
            let dup = dcat.slice(s![.., split.., .., ..]).to_owned();
            dskips[level] = Some(dskip);
            dcur = self.ups[level].backward(&dup);
        }
        dcur = self.bottleneck.backward(&dcur);
        for level in (0..depth).rev() {
            let mut dencoded = self.pools[level].backward(&dcur);
            dencoded += &dskips[level].take().expect("collected above");
            dcur = self.encoders[level].backward(&dencoded);
        }
        dcur
    }

    /// Visits every (parameter, gradient) pair in a fixed order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [F], &mut [F])> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            out.extend(enc.params_and_grads());
        }
        out.extend(self.bottleneck.params_and_grads());
        for up in &mut self.ups {
            let ConvTranspose2d {
                weight,
                bias,
                weight_grad,
                bias_grad,
                ..
            } = up;
            out.push((
                weight.as_slice_mut().expect("standard layout"),
                weight_grad.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                bias.as_slice_mut().expect("standard layout"),
                bias_grad.as_slice_mut().expect("standard layout"),
            ));
        }
        for dec in &mut self.decoders {
            out.extend(dec.params_and_grads());
        }
        out.push((
            self.head.weight.as_slice_mut().expect("standard layout"),
            self.head.weight_grad.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            self.head.bias.as_slice_mut().expect("standard layout"),
            self.head.bias_grad.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    /// Visits every persisted tensor (parameters and batch-norm running
    /// statistics) in a fixed order.
    pub fn state_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            out.extend(enc.state_mut());
        }
        out.extend(self.bottleneck.state_mut());
        for up in &mut self.ups {
            out.push(up.weight.as_slice_mut().expect("standard layout"));
            out.push(up.bias.as_slice_mut().expect("standard layout"));
        }
        for dec in &mut self.decoders {
            out.extend(dec.state_mut());
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, grad) in self.params_and_grads() {
            grad.fill(F::zero());
        }
    }

    /// Total number of persisted scalars.
    pub fn scalar_count(&mut self) -> usize {
        self.state_mut().iter().map(|s| s.len()).sum()
    }

    /// Writes `weights.bin` (little-endian f32 in visitation order) and
    /// `manifest.json` into `dir`, creating it if needed.
    pub fn save_checkpoint(
        &mut self,
        dir: &Path,
        epoch: usize,
        loss_history: &[f64],
        val_dice_history: &[f64],
    ) -> Result<CheckpointManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = self.state_mut();
        let scalar_count: usize = state.iter().map(|s| s.len()).sum();
        let mut bytes = Vec::with_capacity(scalar_count * 4);
        for slice in &state {
            for &v in slice.iter() {
                bytes.extend_from_slice(&(to_f64(v) as f32).to_le_bytes());
            }
        }
        drop(state);
        let weights_path = dir.join(WEIGHTS_FILE);
        fs::write(&weights_path, bytes).map_err(|e| Error::io(&weights_path, e))?;
        let manifest = CheckpointManifest {
            net: self.config.clone(),
            seed: self.seed,
            epoch,
            config_hash: self.config_hash(),
            scalar_count,
            loss_history: loss_history.to_vec(),
            val_dice_history: val_dice_history.to_vec(),
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest)
    }

    /// Restores a network and its manifest from a checkpoint directory.
    pub fn load_checkpoint(dir: &Path) -> Result<(Self, CheckpointManifest)> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&json)?;
        let mut net = Self::new(manifest.net.clone(), manifest.seed)?;
        let weights_path = dir.join(WEIGHTS_FILE);
        let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        let expected = net.scalar_count();
        if blob.len() != expected * 4 {
            return Err(Error::Format(format!(
                "weight blob holds {} bytes, expected {} scalars x 4",
                blob.len(),
                expected
            )));
        }
        let mut offset = 0;
        for slice in net.state_mut() {
            for v in slice.iter_mut() {
                let raw = f32::from_le_bytes(
                    blob[offset..offset + 4].try_into().expect("length checked"),
                );
                *v = F::from(raw).expect("f32 fits every float type");
                offset += 4;
            }
        }
        Ok((net, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    fn small_config(out_channels: usize) -> NetConfig {
        NetConfig {
            input_size: (16, 16),
            depth: 2,
            base_channels: 4,
            channel_growth: 2,
            batch_norm: true,
            in_channels: 1,
            out_channels,
        }
    }

    fn random_input(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let mut c = small_config(2);
        c.depth = 0;
        assert!(c.validate().is_err());
        let mut c = small_config(2);
        c.input_size = (18, 16);
        assert!(c.validate().is_err());
        let mut c = small_config(2);
        c.base_channels = 0;
        assert!(c.validate().is_err());
        assert!(NetConfig::default().validate().is_ok());
    }

    #[test]
    fn construction_is_deterministic_in_the_seed() {
        let mut a = UNet::<f32>::new(small_config(2), 9).unwrap();
        let mut b = UNet::<f32>::new(small_config(2), 9).unwrap();
        let mut c = UNet::<f32>::new(small_config(2), 10).unwrap();
        let sa: Vec<f32> = a.state_mut().iter().flat_map(|s| s.iter().copied()).collect();
        let sb: Vec<f32> = b.state_mut().iter().flat_map(|s| s.iter().copied()).collect();
        let sc: Vec<f32> = c.state_mut().iter().flat_map(|s| s.iter().copied()).collect();
        assert_eq!(sa, sb);
        assert_ne!(sa, sc);
    }

    #[test]
    fn forward_produces_probabilities_of_matching_shape() {
        let mut net = UNet::<f32>::new(small_config(2), 1).unwrap();
        let x = random_input((2, 1, 16, 16), 3).mapv(|v| v as f32);
        let y = net.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (2, 2, 16, 16));
        assert!(y.iter().all(|&p| (0.0..=1.0).contains(&p)));
        // Fully convolutional: a different divisible size also works.
        let x2 = random_input((1, 1, 24, 32), 4).mapv(|v| v as f32);
        assert_eq!(net.forward(&x2, false).unwrap().dim(), (1, 2, 24, 32));
        // Wrong channel count or indivisible size is rejected.
        assert!(net.forward(&Array4::<f32>::zeros((1, 2, 16, 16)), false).is_err());
        assert!(net.forward(&Array4::<f32>::zeros((1, 1, 18, 16)), false).is_err());
    }

    #[test]
    fn evaluation_forward_is_deterministic() {
        let mut net = UNet::<f32>::new(small_config(2), 5).unwrap();
        let x = random_input((2, 1, 16, 16), 6).mapv(|v| v as f32);
        // A training-mode pass first, so normalization statistics are real.
        net.forward(&x, true).unwrap();
        let a = net.forward(&x, false).unwrap();
        let b = net.forward(&x, false).unwrap();
        assert_eq!(a, b, "evaluation passes must not mutate the network");
        // Each sample's output is independent of its batch neighbours.
        let solo = net
            .forward(&x.slice(s![0..1, .., .., ..]).to_owned(), false)
            .unwrap();
        assert_eq!(solo.slice(s![0, .., .., ..]), a.slice(s![0, .., .., ..]));
    }

    /// End-to-end analytic gradients against central finite differences in
    /// f64, covering every layer type including batch norm in training mode.
    #[test]
    fn network_gradients_match_finite_differences() {
        let mut net = UNet::<f64>::new(small_config(2), 42).unwrap();
        let x = random_input((2, 1, 16, 16), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let direction =
            Array4::from_shape_simple_fn((2, 2, 16, 16), || rng.random_range(-1.0..1.0));

        net.zero_grads();
        let _ = net.forward(&x, true).unwrap();
        let _ = net.backward(&direction);
        let analytic: Vec<Vec<f64>> = net
            .params_and_grads()
            .iter()
            .map(|(_, g)| g.to_vec())
            .collect();

        let h = 1e-5;
        let tensor_count = analytic.len();
        let mut checked = 0usize;
        let mut worst: f64 = 0.0;
        for ti in 0..tensor_count {
            let len = analytic[ti].len();
            let mut idxs = vec![0, len / 2, len.saturating_sub(1)];
            idxs.dedup();
            for &ei in &idxs {
                let orig = net.params_and_grads()[ti].0[ei];
                net.params_and_grads()[ti].0[ei] = orig + h;
                let lp = (&net.forward(&x, true).unwrap() * &direction).sum();
                net.params_and_grads()[ti].0[ei] = orig - h;
                let lm = (&net.forward(&x, true).unwrap() * &direction).sum();
                net.params_and_grads()[ti].0[ei] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let got = analytic[ti][ei];
                let rel = (numeric - got).abs() / (1.0 + numeric.abs().max(got.abs()));
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-4,
                    "tensor {ti} elem {ei}: numeric {numeric} vs analytic {got} (rel {rel})"
                );
                checked += 1;
            }
        }
        assert!(checked > 100, "checked only {checked} coordinates");
        assert!(worst <= 1e-4, "worst relative deviation {worst}");
    }

    #[test]
    fn checkpoint_round_trip_preserves_behaviour() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = UNet::<f32>::new(small_config(1), 5).unwrap();
        let x = random_input((2, 1, 16, 16), 9).mapv(|v| v as f32);
        // Mutate running statistics so they must survive the round trip.
        let _ = net.forward(&x, true).unwrap();
        let before = net.forward(&x, false).unwrap();
        let manifest = net
            .save_checkpoint(dir.path(), 7, &[0.9, 0.5], &[0.4, 0.6])
            .unwrap();
        assert_eq!(manifest.epoch, 7);
        assert_eq!(manifest.loss_history, vec![0.9, 0.5]);
        assert_eq!(manifest.config_hash.len(), 16);
        assert!(manifest.scalar_count > 0);

        let (mut restored, loaded) = UNet::<f32>::load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, manifest);
        let after = restored.forward(&x, false).unwrap();
        assert_eq!(
            before.as_slice().unwrap(),
            after.as_slice().unwrap(),
            "restored network must reproduce outputs bit-for-bit"
        );
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = UNet::<f32>::new(small_config(1), 5).unwrap();
        net.save_checkpoint(dir.path(), 0, &[], &[]).unwrap();
        std::fs::write(dir.path().join(WEIGHTS_FILE), [0u8; 12]).unwrap();
        assert!(UNet::<f32>::load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn adam_steps_reduce_a_simple_training_loss() {
        // Fit the network to predict a fixed target patch; the mean squared
        // error must drop substantially within a few steps.
        let mut net = UNet::<f32>::new(small_config(1), 21).unwrap();
        let x = random_input((2, 1, 16, 16), 31).mapv(|v| v as f32);
        let mut target = Array4::<f32>::zeros((2, 1, 16, 16));
        target.slice_mut(s![.., .., 4..12, 4..12]).fill(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..80 {
            net.zero_grads();
            let prob = net.forward(&x, true).unwrap();
            let diff = &prob - &target;
            let loss = diff.mapv(|d| d * d).mean().unwrap();
            let dprob = diff.mapv(|d| 2.0 * d / (2.0 * 16.0 * 16.0));
            let _ = net.backward(&dprob);
            adam.step(net.params_and_grads());
            first.get_or_insert(loss);
            last = loss;
        }
        let first = first.unwrap();
        assert!(
            last < 0.5 * first,
            "loss failed to drop: first {first}, last {last}"
        );
    }
}
