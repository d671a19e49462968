//! Procedural single-channel HR images in `[-1, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Smooth linear and radial ramps.
    Gradients,
    /// Discs and rectangles over a ramp background.
    Shapes,
    /// Oriented sinusoid mixtures with local contrast modulation.
    Texture,
    /// Cycles through the three kinds by sample index.
    Mixed,
}

impl ToyKind {
    fn resolve(self, index: usize) -> ToyKind {
        match self {
            ToyKind::Mixed => [ToyKind::Gradients, ToyKind::Shapes, ToyKind::Texture][index % 3],
            k => k,
        }
    }
}

pub const SIZES: [usize; 3] = [16, 32, 64];

/// `count` images of `size x size`; image `i` depends only on `(seed, i)`.
pub fn make_toy_hr(kind: ToyKind, size: usize, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    if !SIZES.contains(&size) {
        return Err(Error::Config(format!("toy image size must be one of {SIZES:?}, got {size}")));
    }
    if count == 0 {
        return Err(Error::Config("toy dataset needs count >= 1".into()));
    }
    Ok((0..count).map(|i| toy_image(kind.resolve(i), size, &mut rng::derive(seed, &[0x70, i as u64]))).collect())
}

fn toy_image<R: Rng + ?Sized>(kind: ToyKind, size: usize, r: &mut R) -> Tensor {
    let mut img = Tensor::zeros([1, size, size]);
    let n = size as f64;
    match kind {
        ToyKind::Gradients | ToyKind::Mixed => {
            let (a, b) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let (cx, cy) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
            let c = r.random_range(-1.5..1.5);
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / n, y as f64 / n);
                    let rad = (u - cx).powi(2) + (v - cy).powi(2);
                    img.set(0, y, x, a * (u - 0.5) + b * (v - 0.5) + c * (rad - 0.2));
                }
            }
        }
        ToyKind::Shapes => {
            let (a, b) = (r.random_range(-0.4..0.4), r.random_range(-0.4..0.4));
            let base = r.random_range(-0.5..0.5);
            for y in 0..size {
                for x in 0..size {
                    img.set(0, y, x, base + a * (x as f64 / n - 0.5) + b * (y as f64 / n - 0.5));
                }
            }
            let shapes = r.random_range(2..6);
            for _ in 0..shapes {
                let level = r.random_range(-0.9..0.9);
                let (cx, cy) = (r.random_range(0.1..0.9) * n, r.random_range(0.1..0.9) * n);
                let rad = r.random_range(0.08..0.3) * n;
                let disc = r.random_bool(0.5);
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        let inside = if disc { dx * dx + dy * dy <= rad * rad } else { dx.abs() <= rad && dy.abs() <= 0.7 * rad };
                        if inside {
                            img.set(0, y, x, level);
                        }
                    }
                }
            }
        }
        ToyKind::Texture => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let f = r.random_range(0.1..0.7) * std::f64::consts::PI;
                    let th = r.random_range(0.0..std::f64::consts::PI);
                    (f * th.cos(), f * th.sin(), r.random_range(0.0..6.3), r.random_range(0.15..0.35))
                })
                .collect();
            let (mx, my) = (r.random_range(0.5..2.0), r.random_range(0.5..2.0));
            for y in 0..size {
                for x in 0..size {
                    let (xf, yf) = (x as f64, y as f64);
                    let s: f64 = waves.iter().map(|(kx, ky, ph, amp)| amp * (kx * xf + ky * yf + ph).sin()).sum();
                    let envelope = 0.75 + 0.25 * (mx * xf / n * std::f64::consts::TAU).cos() * (my * yf / n * std::f64::consts::TAU).cos();
                    img.set(0, y, x, s * envelope);
                }
            }
        }
    }
    img.map(|v| v.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean spectral energy above an eighth of the sampling rate, naive DFT
    /// of the Hann-windowed image.
    fn high_band_energy(img: &Tensor) -> f64 {
        let n = img.width();
        let mean = img.mean();
        let hann = |i: usize| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos();
        let mut total = 0.0;
        for ky in 0..n {
            for kx in 0..n {
                let fy = ky.min(n - ky);
                let fx = kx.min(n - kx);
                if fx.max(fy) < n / 8 {
                    continue;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let ph = -std::f64::consts::TAU * ((kx * x + ky * y) as f64) / n as f64;
                        let v = (img.at(0, y, x) - mean) * hann(x) * hann(y);
                        re += v * ph.cos();
                        im += v * ph.sin();
                    }
                }
                total += re * re + im * im;
            }
        }
        total / (n * n) as f64
    }

    #[test]
    fn deterministic_and_in_range() {
        for kind in [ToyKind::Gradients, ToyKind::Shapes, ToyKind::Texture, ToyKind::Mixed] {
            let a = make_toy_hr(kind, 16, 5, 3).unwrap();
            let b = make_toy_hr(kind, 16, 5, 3).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|t| t.data().iter().all(|v| (-1.0..=1.0).contains(v))));
        }
        assert!(make_toy_hr(ToyKind::Shapes, 20, 1, 0).is_err());
        assert!(make_toy_hr(ToyKind::Shapes, 16, 0, 0).is_err());
    }

    #[test]
    fn texture_has_more_high_frequency_energy_than_gradients() {
        let tex = make_toy_hr(ToyKind::Texture, 16, 8, 9).unwrap();
        let grad = make_toy_hr(ToyKind::Gradients, 16, 8, 9).unwrap();
        let m = |v: &[Tensor]| v.iter().map(high_band_energy).sum::<f64>() / v.len() as f64;
        let (t, g) = (m(&tex), m(&grad));
        assert!(t > g, "texture {t} vs gradients {g}");
    }
}
