use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second moment estimates for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize, betas: (f64, f64), eps: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.m.len()),
                actual: format!("{} parameters, {} gradients", params.len(), grads.len()),
            });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `lr(i) = start · (end / start)^(i / (total − 1))`, log-linear between the endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpDecay {
    pub start: f64,
    pub end: f64,
}

impl ExpDecay {
    pub fn at(&self, iter: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.start;
        }
        let s = (iter.min(total - 1)) as f64 / (total - 1) as f64;
        (self.start.ln() * (1.0 - s) + self.end.ln() * s).exp()
    }
}
