//! Two-level conv encoder–decoder used for teacher, fake and generator.
//!
//! ```text
//! [x_t, y0] -conv-> h1 (+ noise_conv(eps)) -silu-> h1
//! h1 -conv/2-> silu -> h2
//! h2 -conv-> (+ time embedding) -silu-> h3          (encoder features)
//! up(h3) -conv-> (+ h1) -silu-> h4 -conv-> + y0 -> x0_hat
//! ```

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{self, silu, silu_backward, Conv3x3, Linear};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub channels: usize,
    pub size: usize,
    pub width: usize,
    pub bottleneck: usize,
    pub embed_dim: usize,
    pub noise_input: bool,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec { channels: 1, size: 32, width: 8, bottleneck: 16, embed_dim: 16, noise_input: false }
    }
}

impl ArchSpec {
    pub fn check(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.bottleneck == 0 {
            return Err(Error::Config(format!("architecture dims must be positive: {self:?}")));
        }
        if self.size < 2 || self.size % 2 != 0 {
            return Err(Error::Config(format!("architecture size must be even and >= 2, got {}", self.size)));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!("embed_dim must be even and positive, got {}", self.embed_dim)));
        }
        Ok(())
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        [self.bottleneck, self.size / 2, self.size / 2]
    }

    /// `key=value` lines, the text block stored in checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "arch=unet\nchannels={}\nsize={}\nwidth={}\nbottleneck={}\nembed_dim={}\nnoise_input={}\n",
            self.channels, self.size, self.width, self.bottleneck, self.embed_dim, self.noise_input
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = ArchSpec::default();
        let mut seen_arch = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad architecture line {line:?}")))?;
            let num = || v.trim().parse::<usize>().map_err(|e| Error::Config(format!("{k}: {e}")));
            match k.trim() {
                "arch" => {
                    if v.trim() != "unet" {
                        return Err(Error::Config(format!("unknown architecture {v:?}")));
                    }
                    seen_arch = true;
                }
                "channels" => spec.channels = num()?,
                "size" => spec.size = num()?,
                "width" => spec.width = num()?,
                "bottleneck" => spec.bottleneck = num()?,
                "embed_dim" => spec.embed_dim = num()?,
                "noise_input" => {
                    spec.noise_input = v.trim().parse().map_err(|e| Error::Config(format!("{k}: {e}")))?
                }
                _ => {}
            }
        }
        if !seen_arch {
            return Err(Error::Config("architecture block missing arch=unet".into()));
        }
        spec.check()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    conv_in: Conv3x3,
    conv_down: Conv3x3,
    embed: Linear,
    conv_mid: Conv3x3,
    conv_up: Conv3x3,
    conv_out: Conv3x3,
    noise: Option<Conv3x3>,
    len: usize,
}

impl Layout {
    fn new(spec: &ArchSpec) -> Self {
        let mut off = 0;
        let mut conv = |in_c, out_c, stride, bias: bool| {
            let w_off = off;
            off += out_c * in_c * 9;
            let b = bias.then(|| {
                let b = off;
                off += out_c;
                b
            });
            Conv3x3 { in_c, out_c, stride, w_off, bias: b }
        };
        let c = spec.channels;
        let conv_in = conv(2 * c, spec.width, 1, true);
        let conv_down = conv(spec.width, spec.bottleneck, 2, true);
        let conv_mid = conv(spec.bottleneck, spec.bottleneck, 1, true);
        let conv_up = conv(spec.bottleneck, spec.width, 1, true);
        let conv_out = conv(spec.width, c, 1, true);
        let embed = Linear {
            in_dim: spec.embed_dim,
            out_dim: spec.bottleneck,
            w_off: off,
            b_off: off + spec.embed_dim * spec.bottleneck,
        };
        off += embed.param_len();
        // the noise pathway sits at the end so promotion appends to the predictor vector
        let noise = spec.noise_input.then(|| {
            let n = Conv3x3 { in_c: c, out_c: spec.width, stride: 1, w_off: off, bias: None };
            off += n.param_len();
            n
        });
        Layout { conv_in, conv_down, embed, conv_mid, conv_up, conv_out, noise, len: off }
    }
}

/// Parametric encoder–decoder. All parameters live in one flat vector.
#[derive(Clone, PartialEq)]
pub struct UNet {
    spec: ArchSpec,
    layout: Layout,
    params: Vec<f64>,
}

impl fmt::Debug for UNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UNet").field("spec", &self.spec).field("params", &self.params.len()).finish()
    }
}

/// Intermediate activations of the encoder half.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Tensor,
    eps: Option<Tensor>,
    h1_pre: Tensor,
    h1: Tensor,
    h2_pre: Tensor,
    h2: Tensor,
    emb: Vec<f64>,
    h3_pre: Tensor,
    pub features: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    enc: EncoderCache,
    up: Tensor,
    h4_pre: Tensor,
    h4: Tensor,
}

/// Gradients with respect to the network inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub x_t: Tensor,
    pub y0: Tensor,
    pub eps: Option<Tensor>,
}

impl UNet {
    pub fn new<R: Rng + ?Sized>(spec: ArchSpec, rng: &mut R) -> Result<Self> {
        spec.check()?;
        let layout = Layout::new(&spec);
        let mut params = vec![0.0; layout.len];
        let gain = 2f64.sqrt();
        layout.conv_in.init(&mut params, gain, rng);
        layout.conv_down.init(&mut params, gain, rng);
        layout.conv_mid.init(&mut params, gain, rng);
        layout.conv_up.init(&mut params, gain, rng);
        layout.conv_out.init(&mut params, 0.1, rng);
        layout.embed.init(&mut params, 1.0, rng);
        // noise pathway starts at zero
        Ok(UNet { spec, layout, params })
    }

    pub fn from_params(spec: ArchSpec, params: Vec<f64>) -> Result<Self> {
        spec.check()?;
        let layout = Layout::new(&spec);
        if params.len() != layout.len {
            return Err(Error::Config(format!(
                "parameter count {} does not match architecture ({} expected)",
                params.len(),
                layout.len
            )));
        }
        Ok(UNet { spec, layout, params })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
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

    /// Parameter index range of the noise pathway, if present.
    pub fn noise_param_range(&self) -> Option<std::ops::Range<usize>> {
        self.layout.noise.map(|n| n.w_off..n.w_off + n.param_len())
    }

    /// Copy of this network with a zero-initialized noise pathway appended.
    pub fn with_noise_pathway(&self) -> UNet {
        if self.spec.noise_input {
            return self.clone();
        }
        let spec = ArchSpec { noise_input: true, ..self.spec };
        let layout = Layout::new(&spec);
        let mut params = self.params.clone();
        params.resize(layout.len, 0.0);
        UNet { spec, layout, params }
    }

    fn check_inputs(&self, x_t: &Tensor, y0: &Tensor) {
        assert_eq!(x_t.shape(), self.spec.sample_shape(), "x_t shape does not match architecture");
        assert_eq!(y0.shape(), self.spec.sample_shape(), "y0 shape does not match architecture");
    }

    pub fn encode(&self, x_t: &Tensor, y0: &Tensor, eps: Option<&Tensor>, t: usize) -> EncoderCache {
        self.check_inputs(x_t, y0);
        let p = &self.params;
        let l = &self.layout;
        let input = Tensor::concat_channels(&[x_t, y0]);
        let mut h1_pre = l.conv_in.forward(p, &input);
        let eps = match (l.noise, eps) {
            (Some(nc), Some(e)) => {
                h1_pre = h1_pre.add(&nc.forward(p, e));
                Some(e.clone())
            }
            _ => None,
        };
        let h1 = h1_pre.map(silu);
        let h2_pre = l.conv_down.forward(p, &h1);
        let h2 = h2_pre.map(silu);
        let emb = layers::timestep_embedding(t, self.spec.embed_dim);
        let temb = l.embed.forward(p, &emb);
        let mut h3_pre = l.conv_mid.forward(p, &h2);
        let plane = h3_pre.height() * h3_pre.width();
        for (c, bias) in temb.iter().enumerate() {
            h3_pre.data_mut()[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bias);
        }
        let features = h3_pre.map(silu);
        EncoderCache { input, eps, h1_pre, h1, h2_pre, h2, emb, h3_pre, features }
    }

    pub fn forward(&self, x_t: &Tensor, y0: &Tensor, eps: Option<&Tensor>, t: usize) -> (Tensor, ForwardCache) {
        let enc = self.encode(x_t, y0, eps, t);
        let p = &self.params;
        let l = &self.layout;
        let up = layers::upsample2(&enc.features);
        let h4_pre = l.conv_up.forward(p, &up).add(&enc.h1);
        let h4 = h4_pre.map(silu);
        let out = l.conv_out.forward(p, &h4).add(y0);
        (out, ForwardCache { enc, up, h4_pre, h4 })
    }

    pub fn predict_x0(&self, x_t: &Tensor, y0: &Tensor, eps: Option<&Tensor>, t: usize) -> Tensor {
        self.forward(x_t, y0, eps, t).0
    }

    /// Backward through the full network. Parameter gradients are added to `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Tensor, grad: &mut [f64]) -> InputGrads {
        assert_eq!(grad.len(), self.params.len());
        let p = &self.params;
        let l = &self.layout;
        let d_h4 = l.conv_out.backward(p, &cache.h4, d_out, grad, true).unwrap();
        let d_h4_pre = silu_backward(&cache.h4_pre, &d_h4);
        let d_up = l.conv_up.backward(p, &cache.up, &d_h4_pre, grad, true).unwrap();
        let d_feat = layers::upsample2_backward(&d_up);
        let mut g = self.encoder_backward_inner(&cache.enc, &d_feat, Some(&d_h4_pre), grad);
        g.y0 = g.y0.add(d_out);
        g
    }

    /// Backward from a gradient on the encoder features only.
    pub fn encoder_backward(&self, cache: &EncoderCache, d_features: &Tensor, grad: &mut [f64]) -> InputGrads {
        assert_eq!(grad.len(), self.params.len());
        self.encoder_backward_inner(cache, d_features, None, grad)
    }

    fn encoder_backward_inner(
        &self,
        enc: &EncoderCache,
        d_features: &Tensor,
        d_h1_skip: Option<&Tensor>,
        grad: &mut [f64],
    ) -> InputGrads {
        let p = &self.params;
        let l = &self.layout;
        let d_h3_pre = silu_backward(&enc.h3_pre, d_features);
        let plane = d_h3_pre.height() * d_h3_pre.width();
        let d_temb: Vec<f64> = (0..self.spec.bottleneck)
            .map(|c| d_h3_pre.data()[c * plane..(c + 1) * plane].iter().sum())
            .collect();
        l.embed.backward(p, &enc.emb, &d_temb, grad);
        let d_h2 = l.conv_mid.backward(p, &enc.h2, &d_h3_pre, grad, true).unwrap();
        let d_h2_pre = silu_backward(&enc.h2_pre, &d_h2);
        let mut d_h1 = l.conv_down.backward(p, &enc.h1, &d_h2_pre, grad, true).unwrap();
        if let Some(skip) = d_h1_skip {
            d_h1 = d_h1.add(skip);
        }
        let d_h1_pre = silu_backward(&enc.h1_pre, &d_h1);
        let d_input = l.conv_in.backward(p, &enc.input, &d_h1_pre, grad, true).unwrap();
        let c = self.spec.channels;
        let d_eps = match (l.noise, enc.eps.as_ref()) {
            (Some(nc), Some(e)) => nc.backward(p, e, &d_h1_pre, grad, true),
            _ => None,
        };
        InputGrads { x_t: d_input.slice_channels(0, c), y0: d_input.slice_channels(c, c), eps: d_eps }
    }
}
