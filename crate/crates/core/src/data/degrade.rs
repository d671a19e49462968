//! Simplified blind degradation: blur, downsample, noise, 8-bit quantize,
//! then upsample back to HR size.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub blur_sigma: [f64; 2],
    pub factor: usize,
    pub noise_sigma: [f64; 2],
    pub quantize: bool,
    pub upsample: Upsample,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            blur_sigma: [0.6, 1.4],
            factor: 4,
            noise_sigma: [0.0, 0.04],
            quantize: true,
            upsample: Upsample::Bilinear,
        }
    }
}

impl DegradationSpec {
    pub fn identity() -> Self {
        DegradationSpec { blur_sigma: [0.0, 0.0], factor: 1, noise_sigma: [0.0, 0.0], quantize: false, upsample: Upsample::Nearest }
    }

    pub fn check(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("downscale factor must be >= 1".into()));
        }
        for (name, r) in [("blur_sigma", self.blur_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(r[0] >= 0.0 && r[1] >= r[0]) {
                return Err(Error::Config(format!("{name} range must satisfy 0 <= lo <= hi, got {r:?}")));
            }
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[1] > range[0] { rng.random_range(range[0]..range[1]) } else { range[0] }
}

pub fn degrade<R: Rng + ?Sized>(spec: &DegradationSpec, x0: &Tensor, rng: &mut R) -> Result<Tensor> {
    spec.check()?;
    let [_, h, w] = x0.shape();
    if h % spec.factor != 0 || w % spec.factor != 0 {
        return Err(Error::Config(format!("image size {h}x{w} is not divisible by factor {}", spec.factor)));
    }
    let blur = draw(spec.blur_sigma, rng);
    let noise = draw(spec.noise_sigma, rng);
    let mut lr = downsample(&gaussian_blur(x0, blur), spec.factor);
    if noise > 0.0 {
        lr = lr.map(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
    }
    if spec.quantize {
        lr = lr.map(quantize8);
    }
    Ok(match spec.upsample {
        Upsample::Nearest => upsample_nearest(&lr, spec.factor),
        Upsample::Bilinear => upsample_bilinear(&lr, spec.factor),
    })
}

/// 8-bit round trip of a `[-1, 1]` value.
pub fn quantize8(v: f64) -> f64 {
    let q = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round();
    q / 127.5 - 1.0
}

/// Separable Gaussian blur with reflect padding; identity for `sigma == 0`.
pub fn gaussian_blur(x: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return x.clone();
    }
    let rad = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-rad..=rad).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let [c, h, w] = x.shape();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = Tensor::zeros(x.shape());
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v: f64 = k.iter().enumerate().map(|(j, kv)| kv * x.at(ch, y, reflect(xx as isize + j as isize - rad, w))).sum();
                tmp.set(ch, y, xx, v);
            }
        }
    }
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v: f64 = k.iter().enumerate().map(|(j, kv)| kv * tmp.at(ch, reflect(y as isize + j as isize - rad, h), xx)).sum();
                out.set(ch, y, xx, v);
            }
        }
    }
    out
}

/// Decimation keeping the top-left pixel of each block (input is pre-blurred).
pub fn downsample(x: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return x.clone();
    }
    let [c, h, w] = x.shape();
    let mut out = Tensor::zeros([c, h / f, w / f]);
    for ch in 0..c {
        for y in 0..h / f {
            for xx in 0..w / f {
                out.set(ch, y, xx, x.at(ch, y * f, xx * f));
            }
        }
    }
    out
}

pub fn upsample_nearest(x: &Tensor, f: usize) -> Tensor {
    let [c, h, w] = x.shape();
    let mut out = Tensor::zeros([c, h * f, w * f]);
    for ch in 0..c {
        for y in 0..h * f {
            for xx in 0..w * f {
                out.set(ch, y, xx, x.at(ch, y / f, xx / f));
            }
        }
    }
    out
}

/// Bilinear upsampling with half-pixel centers and edge clamping.
pub fn upsample_bilinear(x: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return x.clone();
    }
    let [c, h, w] = x.shape();
    let mut out = Tensor::zeros([c, h * f, w * f]);
    let src = |o: usize, n: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    for ch in 0..c {
        for y in 0..h * f {
            let (y0, y1, fy) = src(y, h);
            for xx in 0..w * f {
                let (x0, x1, fx) = src(xx, w);
                let top = x.at(ch, y0, x0) * (1.0 - fx) + x.at(ch, y0, x1) * fx;
                let bot = x.at(ch, y1, x0) * (1.0 - fx) + x.at(ch, y1, x1) * fx;
                out.set(ch, y, xx, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_degradation() {
        let x = Tensor::randn([1, 8, 8], &mut rng::stream(0));
        let y = degrade(&DegradationSpec::identity(), &x, &mut rng::stream(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn noise_std_on_flat_image() {
        let s = 0.1;
        let spec = DegradationSpec { noise_sigma: [s, s], ..DegradationSpec::identity() };
        let x = Tensor::zeros([1, 64, 64]);
        let y = degrade(&spec, &x, &mut rng::stream(4)).unwrap();
        let n = y.len() as f64;
        let var = y.data().iter().map(|v| v * v).sum::<f64>() / n;
        // SE of a sample variance is var * sqrt(2 / n)
        let se = s * s * (2.0 / n).sqrt();
        assert!((var - s * s).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn factor_four_shape_contract() {
        let x = Tensor::zeros([1, 32, 32]);
        assert_eq!(downsample(&gaussian_blur(&x, 1.0), 4).shape(), [1, 8, 8]);
        let y = degrade(&DegradationSpec::default(), &x, &mut rng::stream(0)).unwrap();
        assert_eq!(y.shape(), [1, 32, 32]);
        assert!(degrade(&DegradationSpec::default(), &Tensor::zeros([1, 30, 30]), &mut rng::stream(0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let x = Tensor::randn([1, 16, 16], &mut rng::stream(2)).map(|v| v.clamp(-1.0, 1.0));
        let a = degrade(&DegradationSpec::default(), &x, &mut rng::stream(5)).unwrap();
        let b = degrade(&DegradationSpec::default(), &x, &mut rng::stream(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Tensor::full([1, 9, 9], 0.3);
        assert!(gaussian_blur(&x, 1.2).max_abs_diff(&x) < 1e-14);
    }
}
