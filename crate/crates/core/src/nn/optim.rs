use serde::{Deserialize, Serialize};

/// Adam with L2-style weight decay folded into the gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn with_betas(mut self, beta1: f32, beta2: f32) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

impl Adam {
    /// Same update for double-precision parameters (trainable proxies).
    pub fn step_f64(&mut self, params: &mut [f64], grads: &[f64], lr: f32) {
        let before: Vec<f32> = params.iter().map(|&v| v as f32).collect();
        let mut after = before.clone();
        let g: Vec<f32> = grads.iter().map(|&v| v as f32).collect();
        self.step(&mut after, &g, lr);
        for ((dst, b), a) in params.iter_mut().zip(&before).zip(&after) {
            *dst += (a - b) as f64;
        }
    }
}

/// `base * rate^epoch`.
pub fn exponential_decay(base: f32, rate: f32, epoch: usize) -> f32 {
    base * rate.powi(epoch as i32)
}

/// Cosine annealing from `base` to zero over `total` steps.
pub fn cosine_annealing(base: f32, step: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let frac = (step.min(total) as f32) / total as f32;
    0.5 * base * (1.0 + (std::f32::consts::PI * frac).cos())
}
