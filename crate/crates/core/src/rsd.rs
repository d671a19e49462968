//! Residual shifting distillation: the fake-model objective, the tractable
//! generator loss, GAN and perceptual terms, and the alternating training loop.
//!
//! All losses use the mean over tensor elements for `||.||^2` and `<.,.>`,
//! so scalar tensors reproduce the plain formulas.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::codec::LatentCodec;
use crate::diffusion::{marginal_params, sample_gaussian, sample_prior, jump_params, PairedSample};
use crate::error::{Error, Result};
use crate::nn::unet::ForwardCache;
use crate::nn::{DiscriminatorHead, PerceptualProxy, UNet};
use crate::optim::{AdamConfig, AdamW, Ema};
use crate::predictors::{promote_to_generator, DiffPredictor, Generator, NoisyGenerator, Predictor};
use crate::rng;
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Number of evenly placed training timesteps, ignored when `timesteps` is set.
    #[serde(rename = "N")]
    pub n: usize,
    /// Explicit increasing subset ending at `T`; empty means evenly placed.
    pub timesteps: Vec<usize>,
    /// Fake-model updates per generator update.
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss_norm: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub weighted: bool,
    /// Also backpropagate through `z_t` into the teacher and fake outputs.
    pub full_grad: bool,
    pub ema_rate: f64,
    pub disc_hidden: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n: 4,
            timesteps: Vec::new(),
            k: 5,
            lambda1: 2.0,
            lambda2: 3e-3,
            loss_norm: true,
            steps: 600,
            batch_size: 8,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.95,
            seed: 0,
            weighted: false,
            full_grad: false,
            ema_rate: 0.999,
            disc_hidden: 32,
        }
    }
}

impl DistillConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("distill needs K >= 1".into());
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("lambdas must be >= 0, got {} and {}", self.lambda1, self.lambda2));
        }
        if self.steps == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return bad(format!(
                "distill needs steps >= 1, batch_size >= 1, lr > 0 (got {}, {}, {})",
                self.steps, self.batch_size, self.lr
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return bad(format!("ema_rate must lie in [0, 1], got {}", self.ema_rate));
        }
        if self.disc_hidden == 0 {
            return bad("disc_hidden must be >= 1".into());
        }
        Ok(())
    }

    /// The training subset `t_1 < ... < t_N = T`.
    pub fn timesteps(&self, s: &ShiftingSchedule) -> Result<Vec<usize>> {
        if self.timesteps.is_empty() {
            return s.evenly_placed(self.n);
        }
        check_timesteps(s, &self.timesteps)?;
        Ok(self.timesteps.clone())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

pub fn check_timesteps(s: &ShiftingSchedule, ts: &[usize]) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::Config("timestep subset is empty".into()));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) || ts[0] < 1 {
        return Err(Error::Config(format!("timesteps must increase from >= 1, got {ts:?}")));
    }
    if *ts.last().unwrap() != s.steps() {
        return Err(Error::Config(format!("timesteps must end at T = {}, got {ts:?}", s.steps())));
    }
    Ok(())
}

/// One draw of the sampler: data, generator input and output, and the
/// re-noised point `z_t` at which teacher and fake are compared.
#[derive(Debug, Clone)]
pub struct TrainingTuple {
    pub z0: Tensor,
    pub zy: Tensor,
    pub t_n: usize,
    pub z_tn: Tensor,
    pub eps: Tensor,
    pub z0_hat: Tensor,
    pub t: usize,
    pub z_t: Tensor,
    /// Standard normal draw behind `z_t`.
    pub noise: Tensor,
}

/// `z_t = (1 - eta_t) z0_hat + eta_t zy + kappa sqrt(eta_t) noise`, the
/// marginal around `z0_hat` written as a differentiable function of it.
pub fn reparam_z_t(s: &ShiftingSchedule, z0_hat: &Tensor, zy: &Tensor, t: usize, noise: &Tensor) -> Tensor {
    let eta = s.eta(t);
    let sd = s.kappa() * eta.sqrt();
    let mut z = z0_hat.zip_map(zy, |a, b| (1.0 - eta) * a + eta * b);
    z.axpy(sd, noise);
    z
}

fn draw_tuple<R, C>(
    s: &ShiftingSchedule,
    z0: &Tensor,
    zy: &Tensor,
    timesteps: &[usize],
    rng: &mut R,
    generate: impl FnOnce(&Tensor, usize, &Tensor, &Tensor) -> (Tensor, C),
) -> Result<(TrainingTuple, C)>
where
    R: Rng + ?Sized,
{
    let t_n = timesteps[rng.random_range(0..timesteps.len())];
    let z_tn = sample_gaussian(&marginal_params(s, z0, zy, t_n)?, rng);
    let eps = Tensor::randn(z0.shape(), rng);
    let (z0_hat, cache) = generate(&z_tn, t_n, zy, &eps);
    let t = rng.random_range(1..=s.steps());
    let noise = Tensor::randn(z0.shape(), rng);
    let z_t = reparam_z_t(s, &z0_hat, zy, t, &noise);
    let tuple = TrainingTuple { z0: z0.clone(), zy: zy.clone(), t_n, z_tn, eps, z0_hat, t, z_t, noise };
    Ok((tuple, cache))
}

/// Encode the pair, draw `t_n` from the subset and `z_{t_n}` from the data
/// marginal, generate `z0_hat`, then draw `t ~ U{1..T}` and `z_t` around `z0_hat`.
pub fn sample_training_tuple<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    gen: &dyn NoisyGenerator,
    codec: &dyn LatentCodec,
    pair: &PairedSample,
    timesteps: &[usize],
    rng: &mut R,
) -> Result<TrainingTuple> {
    check_timesteps(s, timesteps)?;
    let (z0, zy) = (codec.encode(&pair.x0), codec.encode(&pair.y0));
    let (tuple, ()) = draw_tuple(s, &z0, &zy, timesteps, rng, |x, t, y, e| (gen.generate(x, t, y, e), ()))?;
    Ok(tuple)
}

fn mean_sq(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).sq_norm() / a.len() as f64
}

/// `[w_t] ||fake(z_t, y0, t) - z0_hat||^2` with `z0_hat` held constant.
pub fn fake_loss(
    s: &ShiftingSchedule,
    fake: &dyn Predictor,
    z_t: &Tensor,
    y0: &Tensor,
    t: usize,
    z0_hat: &Tensor,
    weighted: bool,
) -> f64 {
    s.loss_weight(t, weighted) * mean_sq(&fake.predict(z_t, y0, t), z0_hat)
}

/// [`fake_loss`] for a network; `scale` times its parameter gradient is
/// added to `grad`.
#[allow(clippy::too_many_arguments)]
pub fn fake_loss_grad(
    s: &ShiftingSchedule,
    fake: &UNet,
    z_t: &Tensor,
    y0: &Tensor,
    t: usize,
    z0_hat: &Tensor,
    weighted: bool,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let w = s.loss_weight(t, weighted);
    let (pred, cache) = fake.forward(z_t, y0, None, t);
    if w != 0.0 {
        let c = 2.0 * w * scale / pred.len() as f64;
        fake.backward(&cache, &pred.zip_map(z0_hat, |a, b| c * (a - b)), grad);
    }
    w * mean_sq(&pred, z0_hat)
}

/// The inner bracket `-||f*||^2 + ||f_phi||^2 - 2 <f_phi - f*, z0_hat>`.
pub fn rsd_bracket(f_star: &Tensor, f_phi: &Tensor, z0_hat: &Tensor) -> f64 {
    let n = f_star.len() as f64;
    let mut acc = 0.0;
    for ((&a, &b), &z) in f_star.data().iter().zip(f_phi.data()).zip(z0_hat.data()) {
        acc += -a * a + b * b - 2.0 * (b - a) * z;
    }
    acc / n
}

/// A generator loss value and its gradient with respect to `z0_hat`.
#[derive(Debug, Clone)]
pub struct GenLoss {
    pub value: f64,
    pub d_z0_hat: Tensor,
}

/// `-w * bracket` with teacher and fake outputs treated as constants.
pub fn rsd_loss_from_outputs(w: f64, f_star: &Tensor, f_phi: &Tensor, z0_hat: &Tensor) -> GenLoss {
    let c = 2.0 * w / f_star.len() as f64;
    GenLoss { value: -w * rsd_bracket(f_star, f_phi, z0_hat), d_z0_hat: f_phi.zip_map(f_star, |b, a| c * (b - a)) }
}

#[allow(clippy::too_many_arguments)]
pub fn generator_loss_rsd(
    s: &ShiftingSchedule,
    teacher: &dyn Predictor,
    fake: &dyn Predictor,
    z_t: &Tensor,
    y0: &Tensor,
    t: usize,
    z0_hat: &Tensor,
    weighted: bool,
) -> Result<GenLoss> {
    s.check_t(t, 1)?;
    z_t.check_same_shape(z0_hat)?;
    let f_star = teacher.predict(z_t, y0, t);
    let f_phi = fake.predict(z_t, y0, t);
    Ok(rsd_loss_from_outputs(s.loss_weight(t, weighted), &f_star, &f_phi, z0_hat))
}

/// Generator loss with gradient flowing through `z_t` as well. `direct` is
/// the stop-gradient part; `model_path` is the extra gradient that reaches
/// `z0_hat` through the teacher and fake evaluated at `z_t(z0_hat)`.
#[derive(Debug, Clone)]
pub struct FullGenLoss {
    pub value: f64,
    pub direct: Tensor,
    pub model_path: Tensor,
}

impl FullGenLoss {
    pub fn d_z0_hat(&self) -> Tensor {
        self.direct.add(&self.model_path)
    }
}

/// `z_t` must have been built with [`reparam_z_t`] from `z0_hat`, so that
/// `dz_t / dz0_hat = 1 - eta_t`.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_rsd_full(
    s: &ShiftingSchedule,
    teacher: &dyn DiffPredictor,
    fake: &dyn DiffPredictor,
    z_t: &Tensor,
    y0: &Tensor,
    t: usize,
    z0_hat: &Tensor,
    weighted: bool,
) -> Result<FullGenLoss> {
    s.check_t(t, 1)?;
    z_t.check_same_shape(z0_hat)?;
    let w = s.loss_weight(t, weighted);
    let f_star = teacher.predict(z_t, y0, t);
    let f_phi = fake.predict(z_t, y0, t);
    let GenLoss { value, d_z0_hat } = rsd_loss_from_outputs(w, &f_star, &f_phi, z0_hat);
    let c = 2.0 * w / f_star.len() as f64;
    let d_star = f_star.zip_map(z0_hat, |a, z| c * (a - z));
    let d_phi = f_phi.zip_map(z0_hat, |b, z| c * (z - b));
    let through = teacher.vjp_x_t(z_t, y0, t, &d_star).add(&fake.vjp_x_t(z_t, y0, t, &d_phi));
    Ok(FullGenLoss { value, direct: d_z0_hat, model_path: through.scale(1.0 - s.eta(t)) })
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fake-encoder bottleneck features at the clean-image convention `t = 0`.
pub fn gan_features(fake: &UNet, z0: &Tensor, y0: &Tensor) -> Tensor {
    fake.encode(z0, y0, None, 0).features
}

/// `(disc_loss, gen_loss)`: binary cross-entropy on the logits for the
/// discriminator, non-saturating `-log D(fake)` for the generator.
pub fn gan_losses(disc: &DiscriminatorHead, fake: &UNet, z0_real: &Tensor, z0_hat: &Tensor, y0: &Tensor) -> (f64, f64) {
    let lr = disc.logit(&gan_features(fake, z0_real, y0));
    let lf = disc.logit(&gan_features(fake, z0_hat, y0));
    (softplus(-lr) + softplus(lf), softplus(-lf))
}

/// The minimax value `log D(real) - log D(fake)`, with `D = sigmoid(logit)`.
pub fn gan_minimax_value(disc: &DiscriminatorHead, fake: &UNet, z0_real: &Tensor, z0_hat: &Tensor, y0: &Tensor) -> f64 {
    let lr = disc.logit(&gan_features(fake, z0_real, y0));
    let lf = disc.logit(&gan_features(fake, z0_hat, y0));
    -softplus(-lr) + softplus(-lf)
}

/// Discriminator loss; adds `scale` times its gradient to `disc_grad` and,
/// when given, `fake_scale * scale` times its gradient to the fake encoder.
#[allow(clippy::too_many_arguments)]
pub fn gan_disc_loss_grad(
    disc: &DiscriminatorHead,
    fake: &UNet,
    z0_real: &Tensor,
    z0_hat: &Tensor,
    y0: &Tensor,
    scale: f64,
    disc_grad: &mut [f64],
    fake_grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let er = fake.encode(z0_real, y0, None, 0);
    let ef = fake.encode(z0_hat, y0, None, 0);
    let (lr, cr) = disc.forward(&er.features);
    let (lf, cf) = disc.forward(&ef.features);
    let gr = disc.backward(&cr, -sigmoid(-lr) * scale, disc_grad);
    let gf = disc.backward(&cf, sigmoid(lf) * scale, disc_grad);
    if let Some((g, fs)) = fake_grad {
        fake.encoder_backward(&er, &gr.scale(fs), g);
        fake.encoder_backward(&ef, &gf.scale(fs), g);
    }
    softplus(-lr) + softplus(lf)
}

/// Non-saturating generator loss and its gradient with respect to `z0_hat`
/// through the frozen fake encoder and discriminator.
pub fn gan_gen_loss_grad(disc: &DiscriminatorHead, fake: &UNet, z0_hat: &Tensor, y0: &Tensor) -> GenLoss {
    let enc = fake.encode(z0_hat, y0, None, 0);
    let (l, cache) = disc.forward(&enc.features);
    let mut scratch_d = vec![0.0; disc.num_params()];
    let d_feat = disc.backward(&cache, -sigmoid(-l), &mut scratch_d);
    let mut scratch_f = vec![0.0; fake.num_params()];
    let g = fake.encoder_backward(&enc, &d_feat, &mut scratch_f);
    GenLoss { value: softplus(-l), d_z0_hat: g.x_t }
}

pub fn perceptual_loss(proxy: &PerceptualProxy, x0: &Tensor, x_hat: &Tensor) -> f64 {
    proxy.distance(x0, x_hat)
}

/// Perceptual loss and its gradient with respect to `x_hat`.
pub fn perceptual_loss_grad(proxy: &PerceptualProxy, x0: &Tensor, x_hat: &Tensor) -> (f64, Tensor) {
    let (d, g) = proxy.distance_with_grad(x0, x_hat, true);
    (d, g.expect("gradient requested").1)
}

/// Student inference in model space: start at the prior and visit `steps`
/// (decreasing), jumping through the posterior between generator calls.
pub fn student_sample<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    gen: &dyn NoisyGenerator,
    zy: &Tensor,
    steps: &[usize],
    rng: &mut R,
) -> Result<Tensor> {
    if steps.is_empty() || steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(format!("student steps must be nonempty and decreasing, got {steps:?}")));
    }
    let mut z = sample_prior(s, zy, rng);
    for (i, &t) in steps.iter().enumerate() {
        s.check_t(t, 1)?;
        let eps = Tensor::randn(zy.shape(), rng);
        let z0_hat = gen.generate(&z, t, zy, &eps);
        match steps.get(i + 1) {
            None => return Ok(z0_hat),
            Some(&next) => z = sample_gaussian(&jump_params(s, &z, &z0_hat, t, next)?, rng),
        }
    }
    unreachable!("loop returns on the last step")
}

/// Loss components of one generator step; fake-side values average over the K updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "L_theta")]
    pub l_theta: f64,
    #[serde(rename = "L_fake")]
    pub l_fake: f64,
    #[serde(rename = "L_gan_d")]
    pub l_gan_d: f64,
    #[serde(rename = "L_gan_g")]
    pub l_gan_g: f64,
    #[serde(rename = "L_perc")]
    pub l_perc: f64,
}

pub const LOG_HEADER: &str = "step,L_theta,L_fake,L_gan_d,L_gan_g,L_perc";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.step, self.l_theta, self.l_fake, self.l_gan_d, self.l_gan_g, self.l_perc
        )
    }

    fn is_finite(&self) -> bool {
        [self.l_theta, self.l_fake, self.l_gan_d, self.l_gan_g, self.l_perc].iter().all(|v| v.is_finite())
    }
}

pub fn log_csv(log: &[StepRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in log {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Everything a distillation run reads but never updates.
pub struct DistillContext<'a> {
    pub schedule: &'a ShiftingSchedule,
    pub teacher: &'a dyn DiffPredictor,
    pub codec: &'a dyn LatentCodec,
    pub pixels: &'a [PairedSample],
    pub timesteps: Vec<usize>,
    latents: Vec<PairedSample>,
    proxy: PerceptualProxy,
}

impl<'a> DistillContext<'a> {
    pub fn new(
        schedule: &'a ShiftingSchedule,
        teacher: &'a dyn DiffPredictor,
        codec: &'a dyn LatentCodec,
        pixels: &'a [PairedSample],
        timesteps: Vec<usize>,
    ) -> Result<Self> {
        let first = pixels.first().ok_or_else(|| Error::Config("distillation needs training data".into()))?;
        check_timesteps(schedule, &timesteps)?;
        let latents = pixels.iter().map(|p| PairedSample { x0: codec.encode(&p.x0), y0: codec.encode(&p.y0) }).collect();
        let proxy = PerceptualProxy::new(first.x0.channels());
        Ok(DistillContext { schedule, teacher, codec, pixels, timesteps, latents, proxy })
    }

    /// The training pairs in model space.
    pub fn latents(&self) -> &[PairedSample] {
        &self.latents
    }

    pub fn proxy(&self) -> &PerceptualProxy {
        &self.proxy
    }
}

/// Trainable state of a run.
#[derive(Debug, Clone)]
pub struct DistillState {
    pub generator: Generator,
    pub fake: UNet,
    pub disc: DiscriminatorHead,
    pub opt_g: AdamW,
    pub opt_f: AdamW,
    pub opt_d: AdamW,
    pub ema: Ema,
    pub gen_steps: u64,
    pub fake_steps: u64,
    /// Running mean of `|L_theta|` for loss normalization.
    pub norm_scale: Option<f64>,
    pub log: Vec<StepRecord>,
}

const NORM_MOMENTUM: f64 = 0.99;

impl DistillState {
    /// Generator and fake both start from the teacher; the discriminator head
    /// is drawn from the config seed.
    pub fn from_teacher(teacher: &UNet, cfg: &DistillConfig) -> Self {
        let generator = promote_to_generator(teacher);
        let fake = teacher.clone();
        let disc = DiscriminatorHead::new(teacher.spec().bottleneck, cfg.disc_hidden, &mut rng::derive(cfg.seed, &[0xD15C]));
        let adam = cfg.adam();
        DistillState {
            opt_g: AdamW::new(adam, generator.num_params()),
            opt_f: AdamW::new(adam, fake.num_params()),
            opt_d: AdamW::new(adam, disc.num_params()),
            ema: Ema::new(cfg.ema_rate, generator.params()),
            generator,
            fake,
            disc,
            gen_steps: 0,
            fake_steps: 0,
            norm_scale: None,
            log: Vec::new(),
        }
    }

    /// Fold `|l_theta|` into the running mean and return the factor that
    /// divides the generator loss by it.
    pub fn update_norm(&mut self, l_theta: f64) -> f64 {
        let m = match self.norm_scale {
            None => l_theta.abs(),
            Some(m) => NORM_MOMENTUM * m + (1.0 - NORM_MOMENTUM) * l_theta.abs(),
        };
        self.norm_scale = Some(m);
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    }

    /// The EMA weights as a generator.
    pub fn ema_generator(&self) -> Result<Generator> {
        Generator::from_net(UNet::from_params(*self.generator.net().spec(), self.ema.params.clone())?)
    }

    /// One state checkpoint: header with counters and segment lengths; params
    /// are generator, fake, disc, EMA, then the three optimizers' moments.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = Vec::new();
        params.extend_from_slice(self.generator.params());
        params.extend_from_slice(self.fake.params());
        params.extend_from_slice(self.disc.params());
        params.extend_from_slice(&self.ema.params);
        for opt in [&self.opt_g, &self.opt_f, &self.opt_d] {
            let (m, v, _) = opt.state();
            params.extend_from_slice(m);
            params.extend_from_slice(v);
        }
        Checkpoint::new(self.generator.net().spec().to_text(), params)
            .exact()
            .with_entry("kind", "distill_state")
            .with_entry("gen_steps", self.gen_steps)
            .with_entry("fake_steps", self.fake_steps)
            .with_entry("opt_g_steps", self.opt_g.steps())
            .with_entry("opt_f_steps", self.opt_f.steps())
            .with_entry("opt_d_steps", self.opt_d.steps())
            .with_entry("norm_scale", self.norm_scale.map_or("none".to_string(), |v| format!("{v:e}")))
    }

    /// Rebuild from [`DistillState::to_checkpoint`]. The log is not stored.
    pub fn from_checkpoint(ck: &Checkpoint, teacher: &UNet, cfg: &DistillConfig) -> Result<Self> {
        if ck.get("kind") != Some("distill_state") {
            return Err(Error::Config("checkpoint is not a distillation state".into()));
        }
        let mut st = DistillState::from_teacher(teacher, cfg);
        let num = |k: &str| -> Result<u64> {
            ck.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("state checkpoint lacks {k}")))
        };
        let (ng, nf, nd) = (st.generator.num_params(), st.fake.num_params(), st.disc.num_params());
        let want = 3 * ng + 3 * nf + 3 * nd + ng;
        if ck.params.len() != want {
            return Err(Error::Config(format!(
                "state checkpoint holds {} values, this teacher and config need {want}",
                ck.params.len()
            )));
        }
        let mut rest = &ck.params[..];
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        st.generator.params_mut().copy_from_slice(&take(ng));
        st.fake.params_mut().copy_from_slice(&take(nf));
        st.disc.params_mut().copy_from_slice(&take(nd));
        st.ema.params = take(ng);
        let (mg, vg) = (take(ng), take(ng));
        let (mf, vf) = (take(nf), take(nf));
        let (md, vd) = (take(nd), take(nd));
        st.opt_g.restore(mg, vg, num("opt_g_steps")?);
        st.opt_f.restore(mf, vf, num("opt_f_steps")?);
        st.opt_d.restore(md, vd, num("opt_d_steps")?);
        st.gen_steps = num("gen_steps")?;
        st.fake_steps = num("fake_steps")?;
        st.norm_scale = match ck.get("norm_scale") {
            Some("none") | None => None,
            Some(v) => Some(v.parse().map_err(|_| Error::Config(format!("bad norm_scale {v:?}")))?),
        };
        Ok(st)
    }
}

const TAG_FAKE: u64 = 0xFA;
const TAG_GEN: u64 = 0x6E;

/// K fake (and discriminator) updates, then one generator update.
pub fn distill_step(state: &mut DistillState, cfg: &DistillConfig, ctx: &DistillContext) -> Result<StepRecord> {
    let s = ctx.schedule;
    let step = state.gen_steps as usize + 1;
    let b = cfg.batch_size as f64;
    let nonfinite = |what: &str, v: f64| Error::NonFinite { step, detail: format!("{what} = {v}") };

    let (mut l_fake, mut l_gan_d) = (0.0, 0.0);
    for k in 0..cfg.k {
        let mut r = rng::derive(cfg.seed, &[step as u64, TAG_FAKE, k as u64]);
        let mut grad_f = vec![0.0; state.fake.num_params()];
        let mut grad_d = vec![0.0; state.disc.num_params()];
        let (mut lf, mut ld) = (0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let pair = &ctx.latents[r.random_range(0..ctx.latents.len())];
            let gen = &state.generator;
            let (tu, ()) = draw_tuple(s, &pair.x0, &pair.y0, &ctx.timesteps, &mut r, |x, t, y, e| (gen.generate(x, t, y, e), ()))?;
            lf += fake_loss_grad(s, &state.fake, &tu.z_t, &tu.zy, tu.t, &tu.z0_hat, cfg.weighted, 1.0 / b, &mut grad_f);
            if cfg.lambda2 > 0.0 {
                ld += gan_disc_loss_grad(
                    &state.disc,
                    &state.fake,
                    &tu.z0,
                    &tu.z0_hat,
                    &tu.zy,
                    1.0 / b,
                    &mut grad_d,
                    Some((&mut grad_f, cfg.lambda2)),
                );
            }
        }
        let (lf, ld) = (lf / b, ld / b);
        if !lf.is_finite() {
            return Err(nonfinite(&format!("L_fake (update {k})"), lf));
        }
        if !ld.is_finite() {
            return Err(nonfinite(&format!("L_gan_d (update {k})"), ld));
        }
        state.opt_f.step(state.fake.params_mut(), &grad_f);
        if cfg.lambda2 > 0.0 {
            state.opt_d.step(state.disc.params_mut(), &grad_d);
        }
        state.fake_steps += 1;
        l_fake += lf;
        l_gan_d += ld;
    }
    l_fake /= cfg.k as f64;
    l_gan_d /= cfg.k as f64;

    // generator: gather per-item input gradients first, since the
    // normalization scale depends on the batch value of L_theta
    let mut r = rng::derive(cfg.seed, &[step as u64, TAG_GEN]);
    struct Item {
        cache: ForwardCache,
        d_theta: Tensor,
        d_gan: Option<Tensor>,
        perc: Option<(ForwardCache, Tensor)>,
    }
    let mut items = Vec::with_capacity(cfg.batch_size);
    let (mut l_theta, mut l_gan_g, mut l_perc) = (0.0, 0.0, 0.0);
    for _ in 0..cfg.batch_size {
        let idx = r.random_range(0..ctx.latents.len());
        let pair = &ctx.latents[idx];
        let gen = &state.generator;
        let (tu, cache) = draw_tuple(s, &pair.x0, &pair.y0, &ctx.timesteps, &mut r, |x, t, y, e| gen.forward(x, t, y, e))?;
        let d_theta = if cfg.full_grad {
            let l = generator_loss_rsd_full(s, ctx.teacher, &state.fake, &tu.z_t, &tu.zy, tu.t, &tu.z0_hat, cfg.weighted)?;
            l_theta += l.value;
            l.d_z0_hat()
        } else {
            let l = generator_loss_rsd(s, ctx.teacher, &state.fake, &tu.z_t, &tu.zy, tu.t, &tu.z0_hat, cfg.weighted)?;
            l_theta += l.value;
            l.d_z0_hat
        };
        let d_gan = (cfg.lambda2 > 0.0).then(|| {
            let g = gan_gen_loss_grad(&state.disc, &state.fake, &tu.z0_hat, &tu.zy);
            l_gan_g += g.value;
            g.d_z0_hat
        });
        let perc = if cfg.lambda1 > 0.0 {
            let z_big_t = sample_prior(s, &pair.y0, &mut r);
            let eps = Tensor::randn(pair.y0.shape(), &mut r);
            let (z0_one, c1) = gen.forward(&z_big_t, s.steps(), &pair.y0, &eps);
            let x_hat = ctx.codec.decode(&z0_one);
            let (lp, g) = perceptual_loss_grad(&ctx.proxy, &ctx.pixels[idx].x0, &x_hat);
            l_perc += lp;
            Some((c1, ctx.codec.decode_vjp(&g)))
        } else {
            None
        };
        items.push(Item { cache, d_theta, d_gan, perc });
    }
    l_theta /= b;
    l_gan_g /= b;
    l_perc /= b;
    let record = StepRecord { step, l_theta, l_fake, l_gan_d, l_gan_g, l_perc };
    if !record.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!(
                "L_theta = {l_theta}, L_fake = {l_fake}, L_gan_d = {l_gan_d}, L_gan_g = {l_gan_g}, L_perc = {l_perc}"
            ),
        });
    }
    let theta_scale = if cfg.loss_norm { state.update_norm(l_theta) } else { 1.0 };
    let mut grad_g = vec![0.0; state.generator.num_params()];
    for it in &items {
        let mut d = it.d_theta.scale(theta_scale / b);
        if let Some(g) = &it.d_gan {
            d.axpy(cfg.lambda2 / b, g);
        }
        state.generator.backward(&it.cache, &d, &mut grad_g);
        if let Some((c1, g)) = &it.perc {
            state.generator.backward(c1, &g.scale(cfg.lambda1 / b), &mut grad_g);
        }
    }
    state.opt_g.step(state.generator.params_mut(), &grad_g);
    state.ema.update(state.generator.params());
    state.gen_steps += 1;
    state.log.push(record);
    Ok(record)
}

/// Run `distill_step` until `cfg.steps` generator updates have completed,
/// calling `on_step` after each one.
pub fn distill_with(
    state: &mut DistillState,
    cfg: &DistillConfig,
    ctx: &DistillContext,
    mut on_step: impl FnMut(&DistillState) -> Result<()>,
) -> Result<()> {
    cfg.check()?;
    while (state.gen_steps as usize) < cfg.steps {
        distill_step(state, cfg, ctx)?;
        on_step(state)?;
    }
    Ok(())
}

/// Distill `teacher` into a one-step generator on pixel-space pairs.
pub fn distill(
    s: &ShiftingSchedule,
    cfg: &DistillConfig,
    teacher: &UNet,
    codec: &dyn LatentCodec,
    data: &[PairedSample],
) -> Result<(Generator, Vec<StepRecord>)> {
    cfg.check()?;
    let ctx = DistillContext::new(s, teacher, codec, data, cfg.timesteps(s)?)?;
    let mut state = DistillState::from_teacher(teacher, cfg);
    distill_with(&mut state, cfg, &ctx, |_| Ok(()))?;
    Ok((state.generator, state.log))
}
