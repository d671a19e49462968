//! Latent codecs moving images between pixel space and model space.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Config-level codec selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Identity,
    Haar,
}

impl CodecKind {
    pub fn build(self) -> Box<dyn LatentCodec> {
        match self {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::Haar => Box::new(HaarCodec),
        }
    }
}

pub trait LatentCodec: Send + Sync {
    fn name(&self) -> &'static str;
    /// Model-space shape for a pixel-space shape.
    fn latent_shape(&self, pixel: [usize; 3]) -> [usize; 3];
    fn encode(&self, x: &Tensor) -> Tensor;
    fn decode(&self, z: &Tensor) -> Tensor;
    /// Pull a model-space gradient back through `decode`.
    fn decode_vjp(&self, d_pixel: &Tensor) -> Tensor;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn latent_shape(&self, pixel: [usize; 3]) -> [usize; 3] {
        pixel
    }

    fn encode(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn decode(&self, z: &Tensor) -> Tensor {
        z.clone()
    }

    fn decode_vjp(&self, d_pixel: &Tensor) -> Tensor {
        d_pixel.clone()
    }
}

/// One level of the orthonormal 2x2 Haar transform: `c` channels at `h x w`
/// become `4c` channels at `h/2 x w/2` (average, horizontal, vertical, diagonal).
#[derive(Debug, Clone, Copy, Default)]
pub struct HaarCodec;

impl LatentCodec for HaarCodec {
    fn name(&self) -> &'static str {
        "haar"
    }

    fn latent_shape(&self, [c, h, w]: [usize; 3]) -> [usize; 3] {
        [4 * c, h / 2, w / 2]
    }

    fn encode(&self, x: &Tensor) -> Tensor {
        let [c, h, w] = x.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "haar codec needs even sizes");
        let mut z = Tensor::zeros(self.latent_shape(x.shape()));
        for ch in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let a = x.at(ch, 2 * y, 2 * xx);
                    let b = x.at(ch, 2 * y, 2 * xx + 1);
                    let cc = x.at(ch, 2 * y + 1, 2 * xx);
                    let d = x.at(ch, 2 * y + 1, 2 * xx + 1);
                    z.set(4 * ch, y, xx, 0.5 * (a + b + cc + d));
                    z.set(4 * ch + 1, y, xx, 0.5 * (a - b + cc - d));
                    z.set(4 * ch + 2, y, xx, 0.5 * (a + b - cc - d));
                    z.set(4 * ch + 3, y, xx, 0.5 * (a - b - cc + d));
                }
            }
        }
        z
    }

    fn decode(&self, z: &Tensor) -> Tensor {
        let [c4, h, w] = z.shape();
        let mut x = Tensor::zeros([c4 / 4, 2 * h, 2 * w]);
        for ch in 0..c4 / 4 {
            for y in 0..h {
                for xx in 0..w {
                    let (s, hz, v, d) = (z.at(4 * ch, y, xx), z.at(4 * ch + 1, y, xx), z.at(4 * ch + 2, y, xx), z.at(4 * ch + 3, y, xx));
                    x.set(ch, 2 * y, 2 * xx, 0.5 * (s + hz + v + d));
                    x.set(ch, 2 * y, 2 * xx + 1, 0.5 * (s - hz + v - d));
                    x.set(ch, 2 * y + 1, 2 * xx, 0.5 * (s + hz - v - d));
                    x.set(ch, 2 * y + 1, 2 * xx + 1, 0.5 * (s - hz - v + d));
                }
            }
        }
        x
    }

    fn decode_vjp(&self, d_pixel: &Tensor) -> Tensor {
        // orthonormal: the adjoint of decode is encode
        self.encode(d_pixel)
    }
}

/// Max abs reconstruction error of `decode(encode(x))`.
pub fn reconstruction_error(codec: &dyn LatentCodec, x: &Tensor) -> f64 {
    codec.decode(&codec.encode(x)).max_abs_diff(x)
}
