//! First-order stochastic ascent: Adam with bias correction, plus a
//! warmup-then-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

/// Learning-rate decay applied after warmup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// Hold the peak rate for the rest of training.
    Constant,
    /// Half-cosine from the peak rate down to zero.
    Cosine,
}

/// Piecewise learning-rate schedule: linear warmup to `peak` over
/// `warmup_frac` of the total steps, then the configured decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_frac: f64,
    pub decay: Decay,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            peak: 5e-3,
            warmup_frac: 0.1,
            decay: Decay::Cosine,
        }
    }
}

impl LrSchedule {
    /// Rate for 0-based `step` out of `total` steps.
    pub fn rate(&self, step: u64, total: u64) -> f64 {
        let warm = ((total as f64) * self.warmup_frac).ceil() as u64;
        if step < warm {
            return self.peak * (step + 1) as f64 / warm as f64;
        }
        match self.decay {
            Decay::Constant => self.peak,
            Decay::Cosine => {
                let span = (total.saturating_sub(warm)).max(1) as f64;
                let progress = (step - warm) as f64 / span;
                self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Adam state for gradient ascent over a flat parameter vector.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Ascends `params` along `grad` with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] += lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
