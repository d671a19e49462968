//! Frozen random-feature perceptual distance. Three conv layers with fixed
//! seeded weights; per-pixel channel-normalized activations are compared
//! layer by layer, LPIPS-style, without any learned calibration.

use crate::nn::layers::{silu, silu_backward, Conv3x3};
use crate::rng;
use crate::tensor::Tensor;

const PROXY_SEED: u64 = 0x5EED_9E3C;
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PerceptualProxy {
    convs: [Conv3x3; 3],
    params: Vec<f64>,
}

struct LayerCache {
    input: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl PerceptualProxy {
    pub fn new(channels: usize) -> Self {
        let widths = [8, 16, 16];
        let strides = [1, 2, 2];
        let mut off = 0;
        let mut in_c = channels;
        let convs: [Conv3x3; 3] = std::array::from_fn(|i| {
            let c = Conv3x3 { in_c, out_c: widths[i], stride: strides[i], w_off: off, bias: Some(off + widths[i] * in_c * 9) };
            off += c.param_len();
            in_c = widths[i];
            c
        });
        let mut params = vec![0.0; off];
        let mut r = rng::stream(PROXY_SEED ^ channels as u64);
        for c in &convs {
            c.init(&mut params, 2f64.sqrt(), &mut r);
        }
        PerceptualProxy { convs, params }
    }

    fn features(&self, x: &Tensor) -> Vec<LayerCache> {
        let mut out: Vec<LayerCache> = Vec::with_capacity(3);
        let mut cur = x.clone();
        for c in &self.convs {
            let pre = c.forward(&self.params, &cur);
            let act = pre.map(silu);
            out.push(LayerCache { input: cur, pre, act: act.clone() });
            cur = act;
        }
        out
    }

    pub fn distance(&self, a: &Tensor, b: &Tensor) -> f64 {
        self.distance_with_grad(a, b, false).0
    }

    /// Distance and, when requested, its gradients with respect to `a` and `b`.
    pub fn distance_with_grad(&self, a: &Tensor, b: &Tensor, want_grad: bool) -> (f64, Option<(Tensor, Tensor)>) {
        a.check_same_shape(b).expect("perceptual inputs must share a shape");
        let fa = self.features(a);
        let fb = self.features(b);
        let mut total = 0.0;
        let mut d_acts: Vec<(Tensor, Tensor)> = Vec::new();
        for (la, lb) in fa.iter().zip(&fb) {
            let (d, ga, gb) = normalized_sq_dist(&la.act, &lb.act, want_grad);
            total += d;
            if want_grad {
                d_acts.push((ga, gb));
            }
        }
        if !want_grad {
            return (total, None);
        }
        let back = |caches: &[LayerCache], pick: &dyn Fn(&(Tensor, Tensor)) -> Tensor| {
            let mut scratch = vec![0.0; self.params.len()];
            let mut d: Option<Tensor> = None;
            for (i, (c, lc)) in self.convs.iter().zip(caches).enumerate().rev() {
                let mut g = pick(&d_acts[i]);
                if let Some(prev) = d.take() {
                    g = g.add(&prev);
                }
                let d_pre = silu_backward(&lc.pre, &g);
                d = c.backward(&self.params, &lc.input, &d_pre, &mut scratch, true);
            }
            d.unwrap()
        };
        let ga = back(&fa, &|p| p.0.clone());
        let gb = back(&fb, &|p| p.1.clone());
        (total, Some((ga, gb)))
    }
}

/// Mean over pixels of `|| n(a) - n(b) ||^2` with `n` the per-pixel channel
/// normalization.
fn normalized_sq_dist(a: &Tensor, b: &Tensor, want_grad: bool) -> (f64, Tensor, Tensor) {
    let [c, h, w] = a.shape();
    let plane = h * w;
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    let mut total = 0.0;
    let scale = 1.0 / plane as f64;
    for px in 0..plane {
        let va: Vec<f64> = (0..c).map(|ch| a.data()[ch * plane + px]).collect();
        let vb: Vec<f64> = (0..c).map(|ch| b.data()[ch * plane + px]).collect();
        let ra = (va.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        let rb = (vb.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x / ra - y / rb).collect();
        total += diff.iter().map(|d| d * d).sum::<f64>() * scale;
        if want_grad {
            // d/dn_a = 2 diff, then through n = v / r
            for (v, r, sign, g) in [(&va, ra, 1.0, &mut ga), (&vb, rb, -1.0, &mut gb)] {
                let gn: Vec<f64> = diff.iter().map(|d| sign * 2.0 * d * scale).collect();
                let dot: f64 = gn.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
                for ch in 0..c {
                    g.data_mut()[ch * plane + px] = gn[ch] / r - v[ch] * dot / (r * r * r);
                }
            }
        }
    }
    (total, ga, gb)
}
