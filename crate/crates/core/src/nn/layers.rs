//! Layer primitives over flat parameter slices, each with a hand-written
//! backward pass. Convolutions are 3x3 with padding 1.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3x3 {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub w_off: usize,
    pub bias: Option<usize>,
}

impl Conv3x3 {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * 9
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + if self.bias.is_some() { self.out_c } else { 0 }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.stride == 1 {
            (h, w)
        } else {
            ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], gain: f64, rng: &mut R) {
        let sd = gain / ((self.in_c * 9) as f64).sqrt();
        for p in &mut params[self.w_off..self.w_off + self.weight_len()] {
            *p = sd * rng.sample::<f64, _>(StandardNormal);
        }
        if let Some(b) = self.bias {
            params[b..b + self.out_c].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        let [ic, h, w] = input.shape();
        assert_eq!(ic, self.in_c, "conv input channels");
        let (oh, ow) = self.out_size(h, w);
        let mut out = Tensor::zeros([self.out_c, oh, ow]);
        let inp = input.data();
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let od = out.data_mut();
        for o in 0..self.out_c {
            let oplane = &mut od[o * oh * ow..(o + 1) * oh * ow];
            if let Some(b) = self.bias {
                oplane.iter_mut().for_each(|v| *v = params[b + o]);
            }
            for i in 0..self.in_c {
                let iplane = &inp[i * h * w..(i + 1) * h * w];
                for k in 0..9 {
                    let wv = weights[(o * self.in_c + i) * 9 + k];
                    let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
                    for_each_tap(self.stride, h, w, oh, ow, dy, dx, |orow, irow, ox0, ix0, n| {
                        let dst = &mut oplane[orow * ow + ox0..];
                        if self.stride == 1 {
                            let src = &iplane[irow * w + ix0..irow * w + ix0 + n];
                            for (d, s) in dst[..n].iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        } else {
                            for j in 0..n {
                                dst[j] += wv * iplane[irow * w + ix0 + j * self.stride];
                            }
                        }
                    });
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        input: &Tensor,
        d_out: &Tensor,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Tensor> {
        let [_, h, w] = input.shape();
        let [_, oh, ow] = d_out.shape();
        let inp = input.data();
        let dout = d_out.data();
        let mut d_in = want_input.then(|| Tensor::zeros(input.shape()));
        for o in 0..self.out_c {
            let gplane = &dout[o * oh * ow..(o + 1) * oh * ow];
            if let Some(b) = self.bias {
                grad[b + o] += gplane.iter().sum::<f64>();
            }
            for i in 0..self.in_c {
                let iplane = &inp[i * h * w..(i + 1) * h * w];
                for k in 0..9 {
                    let widx = self.w_off + (o * self.in_c + i) * 9 + k;
                    let wv = params[widx];
                    let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
                    let mut acc = 0.0;
                    let s = self.stride;
                    match d_in.as_mut() {
                        Some(di) => {
                            let diplane = &mut di.data_mut()[i * h * w..(i + 1) * h * w];
                            for_each_tap(s, h, w, oh, ow, dy, dx, |orow, irow, ox0, ix0, n| {
                                for j in 0..n {
                                    let g = gplane[orow * ow + ox0 + j];
                                    let ii = irow * w + ix0 + j * s;
                                    acc += g * iplane[ii];
                                    diplane[ii] += wv * g;
                                }
                            });
                        }
                        None => {
                            for_each_tap(s, h, w, oh, ow, dy, dx, |orow, irow, ox0, ix0, n| {
                                for j in 0..n {
                                    acc += gplane[orow * ow + ox0 + j] * iplane[irow * w + ix0 + j * s];
                                }
                            });
                        }
                    }
                    grad[widx] += acc;
                }
            }
        }
        d_in
    }
}

/// Visit every output row that has a valid input row for tap `(dy, dx)`,
/// passing `(out_row, in_row, first_out_col, first_in_col, count)`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn for_each_tap(
    stride: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dy: isize,
    dx: isize,
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    let s = stride as isize;
    // smallest ox with ox*s + dx >= 0, largest with ox*s + dx <= w-1
    let ox0 = if dx < 0 { ((-dx) + s - 1) / s } else { 0 };
    let ox1 = ((w as isize - 1 - dx) / s).min(ow as isize - 1);
    if ox1 < ox0 {
        return;
    }
    let n = (ox1 - ox0 + 1) as usize;
    let ix0 = (ox0 * s + dx) as usize;
    for oy in 0..oh {
        let iy = oy as isize * s + dy;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        f(oy, iy as usize, ox0 as usize, ix0, n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn param_len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], gain: f64, rng: &mut R) {
        let sd = gain / (self.in_dim as f64).sqrt();
        for p in &mut params[self.w_off..self.w_off + self.in_dim * self.out_dim] {
            *p = sd * rng.sample::<f64, _>(StandardNormal);
        }
        params[self.b_off..self.b_off + self.out_dim].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &params[self.w_off + o * self.in_dim..self.w_off + (o + 1) * self.in_dim];
                params[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, params: &[f64], x: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = d_out[o];
            grad[self.b_off + o] += g;
            for i in 0..self.in_dim {
                grad[self.w_off + o * self.in_dim + i] += g * x[i];
                dx[i] += g * params[self.w_off + o * self.in_dim + i];
            }
        }
        dx
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `d_pre = d_post * silu'(pre)`
pub fn silu_backward(pre: &Tensor, d_post: &Tensor) -> Tensor {
    pre.zip_map(d_post, |p, g| g * silu_grad(p))
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let [c, h, w] = x.shape();
    let mut out = Tensor::zeros([c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(ch, y, xx, x.at(ch, y / 2, xx / 2));
            }
        }
    }
    out
}

pub fn upsample2_backward(d_out: &Tensor) -> Tensor {
    let [c, h2, w2] = d_out.shape();
    let mut d = Tensor::zeros([c, h2 / 2, w2 / 2]);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let v = d.at(ch, y / 2, x / 2) + d_out.at(ch, y, x);
                d.set(ch, y / 2, x / 2, v);
            }
        }
    }
    d
}

/// Sinusoidal timestep embedding of even dimension `dim`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_conv(params: &[f64], c: &Conv3x3, x: &Tensor) -> Tensor {
        let [_, h, w] = x.shape();
        let (oh, ow) = c.out_size(h, w);
        let mut out = Tensor::zeros([c.out_c, oh, ow]);
        for o in 0..c.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = c.bias.map(|b| params[b + o]).unwrap_or(0.0);
                    for i in 0..c.in_c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * c.stride + ky) as isize - 1;
                                let ix = (ox * c.stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += params[c.w_off + (o * c.in_c + i) * 9 + ky * 3 + kx]
                                        * x.at(i, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(o, oy, ox, acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut r = rng::stream(11);
        for stride in [1, 2] {
            let c = Conv3x3 { in_c: 3, out_c: 2, stride, w_off: 0, bias: Some(54) };
            let mut p = vec![0.0; c.param_len()];
            c.init(&mut p, 1.0, &mut r);
            p[54] = 0.3;
            let x = Tensor::randn([3, 6, 6], &mut r);
            let a = c.forward(&p, &x);
            let b = naive_conv(&p, &c, &x);
            assert!(a.max_abs_diff(&b) < 1e-12, "stride {stride}");
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        let mut r = rng::stream(12);
        for stride in [1, 2] {
            let c = Conv3x3 { in_c: 2, out_c: 3, stride, w_off: 0, bias: Some(54) };
            let mut p = vec![0.0; c.param_len()];
            c.init(&mut p, 1.0, &mut r);
            let x = Tensor::randn([2, 8, 8], &mut r);
            let y = c.forward(&p, &x);
            let g = Tensor::randn(y.shape(), &mut r);
            let mut grad = vec![0.0; p.len()];
            let dx = c.backward(&p, &x, &g, &mut grad, true).unwrap();
            // <g, J dx_probe> == <J^T g, dx_probe>
            let probe = Tensor::randn(x.shape(), &mut r);
            let eps = 1e-6;
            let mut xp = x.clone();
            xp.axpy(eps, &probe);
            let mut xm = x.clone();
            xm.axpy(-eps, &probe);
            let fd = (c.forward(&p, &xp).dot(&g) - c.forward(&p, &xm).dot(&g)) / (2.0 * eps);
            assert!((fd - dx.dot(&probe)).abs() < 1e-6 * (1.0 + fd.abs()));
            let k = 7;
            let mut pp = p.clone();
            pp[k] += eps;
            let mut pm = p.clone();
            pm[k] -= eps;
            let fd = (c.forward(&pp, &x).dot(&g) - c.forward(&pm, &x).dot(&g)) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let x = Tensor::from_vec([1, 1, 2], vec![1.0, 2.0]);
        let u = upsample2(&x);
        assert_eq!(u.shape(), [1, 2, 4]);
        let d = upsample2_backward(&Tensor::full([1, 2, 4], 1.0));
        assert_eq!(d.data(), &[4.0, 4.0]);
    }
}
