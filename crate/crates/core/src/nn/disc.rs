//! Discriminator head attached to the fake model's bottleneck features:
//! channel-wise average pool, hidden layer, scalar logit.

use rand::Rng;

use crate::nn::layers::{silu, silu_grad, Linear};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorHead {
    hidden: Linear,
    out: Linear,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    shape: [usize; 3],
    pooled: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl DiscriminatorHead {
    pub fn new<R: Rng + ?Sized>(feature_channels: usize, hidden: usize, rng: &mut R) -> Self {
        let h = Linear { in_dim: feature_channels, out_dim: hidden, w_off: 0, b_off: feature_channels * hidden };
        let o_off = h.param_len();
        let o = Linear { in_dim: hidden, out_dim: 1, w_off: o_off, b_off: o_off + hidden };
        let mut params = vec![0.0; o_off + o.param_len()];
        h.init(&mut params, 2f64.sqrt(), rng);
        o.init(&mut params, 1.0, rng);
        DiscriminatorHead { hidden: h, out: o, params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, features: &Tensor) -> (f64, DiscCache) {
        assert_eq!(features.channels(), self.hidden.in_dim, "feature channels");
        let pooled: Vec<f64> = (0..features.channels())
            .map(|c| features.channel(c).iter().sum::<f64>() / features.channel(c).len() as f64)
            .collect();
        let pre = self.hidden.forward(&self.params, &pooled);
        let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
        let logit = self.out.forward(&self.params, &act)[0];
        (logit, DiscCache { shape: features.shape(), pooled, pre, act })
    }

    pub fn logit(&self, features: &Tensor) -> f64 {
        self.forward(features).0
    }

    /// Adds parameter gradients and returns the feature gradient for `d_logit`.
    pub fn backward(&self, cache: &DiscCache, d_logit: f64, grad: &mut [f64]) -> Tensor {
        let d_act = self.out.backward(&self.params, &cache.act, &[d_logit], grad);
        let d_pre: Vec<f64> = d_act.iter().zip(&cache.pre).map(|(g, &p)| g * silu_grad(p)).collect();
        let d_pooled = self.hidden.backward(&self.params, &cache.pooled, &d_pre, grad);
        let [c, h, w] = cache.shape;
        let n = (h * w) as f64;
        let mut d = Tensor::zeros(cache.shape);
        for ch in 0..c {
            let plane = &mut d.data_mut()[ch * h * w..(ch + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = d_pooled[ch] / n);
        }
        d
    }
}
