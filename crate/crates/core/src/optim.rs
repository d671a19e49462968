//! AdamW over flat parameter vectors, and an exponential moving average.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-5, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        AdamW { cfg, m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.steps += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
    }

    /// Moment buffers and step count, for checkpointing.
    pub fn state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.steps)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, steps: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.steps = steps;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub rate: f64,
    pub params: Vec<f64>,
}

impl Ema {
    pub fn new(rate: f64, init: &[f64]) -> Self {
        Ema { rate, params: init.to_vec() }
    }

    pub fn update(&mut self, current: &[f64]) {
        for (e, c) in self.params.iter_mut().zip(current) {
            *e = self.rate * *e + (1.0 - self.rate) * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let mut opt = AdamW::new(AdamConfig { lr: 0.1, ..Default::default() }, 2);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 1.9).abs() < 1e-8, "{p:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0];
        let mut opt = AdamW::new(AdamConfig { lr: 0.01, ..Default::default() }, 1);
        for _ in 0..5000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-2, "{p:?}");
    }

    #[test]
    fn ema_tracks() {
        let mut e = Ema::new(0.5, &[0.0]);
        e.update(&[1.0]);
        e.update(&[1.0]);
        assert_eq!(e.params, vec![0.75]);
    }
}
