//! Adam optimizer operating on flat parameter/gradient slice pairs.

use ndarray::NdFloat;

use super::layers::cast_scalar;

/// Optimizer hyper-parameters; defaults are learning rate 1e-3 with
/// betas (0.9, 0.999) and epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment state is allocated lazily on the first step and is
/// indexed by the position of each parameter tensor in the visitation order,
/// which must stay identical across calls.
pub struct Adam<F: NdFloat> {
    config: AdamConfig,
    step_count: u32,
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Applies one update to every (parameter, gradient) pair.
    pub fn step(&mut self, params: Vec<(&mut [F], &mut [F])>) {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(p, _)| vec![F::zero(); p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        assert_eq!(
            params.len(),
            self.first_moment.len(),
            "parameter structure changed between steps"
        );
        self.step_count += 1;
        let b1: F = cast_scalar(self.config.beta1);
        let b2: F = cast_scalar(self.config.beta2);
        let lr: F = cast_scalar(self.config.learning_rate);
        let eps: F = cast_scalar(self.config.epsilon);
        let one = F::one();
        let corr1: F = cast_scalar(1.0 - self.config.beta1.powi(self.step_count as i32));
        let corr2: F = cast_scalar(1.0 - self.config.beta2.powi(self.step_count as i32));
        for (idx, (param, grad)) in params.into_iter().enumerate() {
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            assert_eq!(param.len(), m.len(), "parameter size changed between steps");
            for j in 0..param.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                param[j] = param[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
