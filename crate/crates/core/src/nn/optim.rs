use super::params::ParamStore;
use crate::error::{Error, Result};

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm.is_finite() && norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stab: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_stab: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    /// Clips the accumulated gradients to `grad_clip_norm`, applies one AdamW
    /// update and zeroes the gradients. Returns the pre-clip gradient norm.
    ///
    /// A non-finite gradient component aborts the step and leaves both the
    /// parameters and the moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grad_clip_norm: f64) -> Result<f64> {
        if self.first_moment.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer holds {} moments but the model has {} parameters",
                self.first_moment.len(),
                params.len()
            )));
        }
        if let Some((index, &value)) = params.grads().iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        let (values, grads) = params.split_mut();
        let norm = clip_grad_norm(grads, grad_clip_norm);

        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for i in 0..values.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bias1;
            let v_hat = v / bias2;
            values[i] -= lr * self.weight_decay * values[i];
            values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps_stab);
        }
        params.zero_grads();
        Ok(norm)
    }
}
