//! The VSD baseline transplanted to residual shifting: one-step generation
//! from the prior, a fake model trained on generator samples, and a
//! generator update with teacher and fake outputs fully detached.
//!
//! Weight chain. Writing the VSD gradient per step as
//! `-w''_t E[(f* - f_phi) dz0_hat/dtheta]` with `w'_t = w^VSD_t (1 - eta_t)` and
//! `w''_t = w'_t (1 - eta_t) / (kappa^2 eta_t)`, the stop-gradient RSD
//! gradient `2 omega_t (f_phi - f*) dz0_hat/dtheta` equals `2 alpha_t` times it
//! exactly when `w''_t = omega_t / alpha_t`, i.e. for the base weighting
//! `w^VSD_t = omega_t kappa^2 eta_t / (alpha_t (1 - eta_t)^2)`. Here `omega_t`
//! is the RSD loss weight (1, or `w_t` when weighted).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::sample_prior;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::predictors::{NoisyGenerator, Predictor};
use crate::rng;
use crate::rsd::{
    fake_loss_grad, generator_loss_rsd, reparam_z_t, rsd_loss_from_outputs, DistillConfig, DistillContext,
    DistillState, GenLoss, StepRecord, TrainingTuple,
};
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsdConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub loss_norm: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub weighted: bool,
    pub ema_rate: f64,
}

impl Default for VsdConfig {
    fn default() -> Self {
        let d = DistillConfig::default();
        VsdConfig {
            k: d.k,
            loss_norm: d.loss_norm,
            steps: d.steps,
            batch_size: d.batch_size,
            lr: d.lr,
            beta1: d.beta1,
            beta2: d.beta2,
            seed: d.seed,
            weighted: d.weighted,
            ema_rate: d.ema_rate,
        }
    }
}

impl VsdConfig {
    /// The equivalent RSD config: single timestep `T`, no supervised terms.
    pub fn as_distill(&self, s: &ShiftingSchedule) -> DistillConfig {
        DistillConfig {
            n: 1,
            timesteps: vec![s.steps()],
            k: self.k,
            lambda1: 0.0,
            lambda2: 0.0,
            loss_norm: self.loss_norm,
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            seed: self.seed,
            weighted: self.weighted,
            full_grad: false,
            ema_rate: self.ema_rate,
            ..DistillConfig::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.k == 0 || self.steps == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "vsd needs K, steps, batch_size >= 1 and lr > 0 (got {}, {}, {}, {})",
                self.k, self.steps, self.batch_size, self.lr
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

/// `w'_t = w_base (1 - eta_t)`.
pub fn vsd_w_prime(s: &ShiftingSchedule, t: usize, w_base: f64) -> f64 {
    w_base * (1.0 - s.eta(t))
}

/// `w''_t = w'_t (1 - eta_t) / (kappa^2 eta_t)`.
pub fn vsd_w_double_prime(s: &ShiftingSchedule, t: usize, w_base: f64) -> f64 {
    let k2 = s.kappa() * s.kappa();
    vsd_w_prime(s, t, w_base) * (1.0 - s.eta(t)) / (k2 * s.eta(t))
}

/// The base weighting under which the stop-gradient RSD gradient is exactly
/// `2 alpha_t` times the VSD gradient. Infinite where `eta_t = 1`.
pub fn vsd_matched_base_weight(s: &ShiftingSchedule, t: usize, weighted: bool) -> f64 {
    let (eta, a) = (s.eta(t), s.alpha(t));
    s.loss_weight(t, weighted) * s.kappa() * s.kappa() * eta / (a * (1.0 - eta).powi(2))
}

/// `w''_t` under the matched base weighting, `omega_t / alpha_t`, computed
/// without passing through the base weight.
pub fn vsd_matched_w_double_prime(s: &ShiftingSchedule, t: usize, weighted: bool) -> f64 {
    s.loss_weight(t, weighted) / s.alpha(t)
}

/// Gradient of `L_VSD` with respect to `z0_hat` for one sample:
/// `-w'' (f* - f_phi)`, averaged over elements like every other loss.
pub fn vsd_gradient(w_double_prime: f64, f_star: &Tensor, f_phi: &Tensor) -> Tensor {
    let c = w_double_prime / f_star.len() as f64;
    f_star.zip_map(f_phi, |a, b| -c * (a - b))
}

/// The VSD training surrogate: the bracket with teacher and fake outputs
/// detached. Its gradient is `2 alpha_t` times [`vsd_gradient`] under the
/// matched weighting.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_vsd(
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

fn draw_vsd<R, C>(
    s: &ShiftingSchedule,
    z0: &Tensor,
    zy: &Tensor,
    rng: &mut R,
    generate: impl FnOnce(&Tensor, usize, &Tensor, &Tensor) -> (Tensor, C),
) -> (TrainingTuple, C)
where
    R: Rng + ?Sized,
{
    let big_t = s.steps();
    let z_big = sample_prior(s, zy, rng);
    let eps = Tensor::randn(zy.shape(), rng);
    let (z0_hat, cache) = generate(&z_big, big_t, zy, &eps);
    let t = rng.random_range(1..=big_t);
    let noise = Tensor::randn(zy.shape(), rng);
    let z_t = reparam_z_t(s, &z0_hat, zy, t, &noise);
    (TrainingTuple { z0: z0.clone(), zy: zy.clone(), t_n: big_t, z_tn: z_big, eps, z0_hat, t, z_t, noise }, cache)
}

/// `z_T` from the prior, `z0_hat = G(z_T, T, zy, eps)`, then `t ~ U{1..T}` and
/// `z_t` around `z0_hat`. Model-space inputs.
pub fn sample_vsd_tuple<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    gen: &dyn NoisyGenerator,
    z0: &Tensor,
    zy: &Tensor,
    rng: &mut R,
) -> TrainingTuple {
    draw_vsd(s, z0, zy, rng, |x, t, y, e| (gen.generate(x, t, y, e), ())).0
}

const TAG_FAKE: u64 = 0x5FA;
const TAG_GEN: u64 = 0x56E;

/// K fake updates, then one generator update with the detached surrogate.
/// `ctx.timesteps` is ignored; generation always starts from the prior at `T`.
pub fn vsd_step(state: &mut DistillState, cfg: &VsdConfig, ctx: &DistillContext) -> Result<StepRecord> {
    let s = ctx.schedule;
    let latents = ctx.latents();
    let step = state.gen_steps as usize + 1;
    let b = cfg.batch_size as f64;
    let mut l_fake = 0.0;
    for k in 0..cfg.k {
        let mut r = rng::derive(cfg.seed, &[step as u64, TAG_FAKE, k as u64]);
        let mut grad_f = vec![0.0; state.fake.num_params()];
        let mut lf = 0.0;
        for _ in 0..cfg.batch_size {
            let pair = &latents[r.random_range(0..latents.len())];
            let tu = sample_vsd_tuple(s, &state.generator, &pair.x0, &pair.y0, &mut r);
            lf += fake_loss_grad(s, &state.fake, &tu.z_t, &tu.zy, tu.t, &tu.z0_hat, cfg.weighted, 1.0 / b, &mut grad_f);
        }
        lf /= b;
        if !lf.is_finite() {
            return Err(Error::NonFinite { step, detail: format!("L_fake (update {k}) = {lf}") });
        }
        state.opt_f.step(state.fake.params_mut(), &grad_f);
        state.fake_steps += 1;
        l_fake += lf;
    }
    l_fake /= cfg.k as f64;

    let mut r = rng::derive(cfg.seed, &[step as u64, TAG_GEN]);
    let mut items = Vec::with_capacity(cfg.batch_size);
    let mut l_theta = 0.0;
    for _ in 0..cfg.batch_size {
        let pair = &latents[r.random_range(0..latents.len())];
        let gen = &state.generator;
        let (tu, cache) = draw_vsd(s, &pair.x0, &pair.y0, &mut r, |x, t, y, e| gen.forward(x, t, y, e));
        let l = generator_loss_rsd(s, ctx.teacher, &state.fake, &tu.z_t, &tu.zy, tu.t, &tu.z0_hat, cfg.weighted)?;
        l_theta += l.value;
        items.push((cache, l.d_z0_hat));
    }
    l_theta /= b;
    if !l_theta.is_finite() {
        return Err(Error::NonFinite { step, detail: format!("L_theta = {l_theta}, L_fake = {l_fake}") });
    }
    let scale = if cfg.loss_norm { state.update_norm(l_theta) } else { 1.0 };
    let mut grad_g = vec![0.0; state.generator.num_params()];
    for (cache, d) in &items {
        state.generator.backward(cache, &d.scale(scale / b), &mut grad_g);
    }
    state.opt_g.step(state.generator.params_mut(), &grad_g);
    state.ema.update(state.generator.params());
    state.gen_steps += 1;
    let record = StepRecord { step, l_theta, l_fake, l_gan_d: 0.0, l_gan_g: 0.0, l_perc: 0.0 };
    state.log.push(record);
    Ok(record)
}

pub fn distill_vsd_with(
    state: &mut DistillState,
    cfg: &VsdConfig,
    ctx: &DistillContext,
    mut on_step: impl FnMut(&DistillState) -> Result<()>,
) -> Result<()> {
    cfg.check()?;
    while (state.gen_steps as usize) < cfg.steps {
        vsd_step(state, cfg, ctx)?;
        on_step(state)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IdentityCodec;
    use crate::diffusion::{marginal_params, PairedSample};
    use crate::nn::{ArchSpec, UNet};
    use crate::schedule::ScheduleShape;

    fn sched() -> ShiftingSchedule {
        ShiftingSchedule::build(5, 0.01, 0.95, 1.3, ScheduleShape::LogLinear).unwrap()
    }

    #[test]
    fn hand_gradient() {
        let g = vsd_gradient(1.0, &Tensor::scalar(1.0), &Tensor::scalar(0.0));
        assert_eq!(g.data(), &[-1.0]);
    }

    #[test]
    fn matched_weighting_closes_the_chain() {
        let s = sched();
        for t in 2..=5 {
            for weighted in [false, true] {
                let base = vsd_matched_base_weight(&s, t, weighted);
                let direct = vsd_matched_w_double_prime(&s, t, weighted);
                let chained = vsd_w_double_prime(&s, t, base);
                assert!((chained - direct).abs() <= 1e-12 * direct.abs(), "t={t}: {chained} vs {direct}");
            }
        }
    }

    #[test]
    fn rsd_weight_as_base_does_not_give_two_alpha() {
        // with w_base = w_t the ratio 2 w_t / w''_t is 2 kappa^2 eta_t / (1 - eta_t)^2, not 2 alpha_t
        let s = sched();
        for t in 2..=5 {
            let w = s.weight_of(t).unwrap();
            let ratio = 2.0 * w / vsd_w_double_prime(&s, t, w);
            let k2 = s.kappa() * s.kappa();
            let want = 2.0 * k2 * s.eta(t) / (1.0 - s.eta(t)).powi(2);
            assert!((ratio - want).abs() <= 1e-12 * want);
            assert!((ratio - 2.0 * s.alpha(t)).abs() > 1e-3);
        }
    }

    #[test]
    fn reparam_matches_marginal() {
        let s = sched();
        let mut r = rng::stream(4);
        let z0 = Tensor::randn([1, 3, 3], &mut r);
        let zy = Tensor::randn([1, 3, 3], &mut r);
        for t in 1..=5 {
            let p = marginal_params(&s, &z0, &zy, t).unwrap();
            let mean = reparam_z_t(&s, &z0, &zy, t, &Tensor::zeros([1, 3, 3]));
            assert!(mean.max_abs_diff(&p.mean) <= 1e-12);
            // variance: the coefficient on a unit noise tensor, squared
            let shifted = reparam_z_t(&s, &z0, &zy, t, &Tensor::full([1, 3, 3], 1.0));
            let sd = shifted.sub(&mean).mean();
            assert!((sd * sd - p.var).abs() <= 1e-12);
        }
    }

    #[test]
    fn frozen_fake_at_teacher_keeps_generator_fixed() {
        let spec = ArchSpec { size: 4, width: 3, bottleneck: 4, embed_dim: 4, ..Default::default() };
        let teacher = UNet::new(spec, &mut rng::stream(1)).unwrap();
        let s = sched();
        let mut r = rng::stream(2);
        let data: Vec<PairedSample> = (0..3)
            .map(|_| PairedSample { x0: Tensor::randn([1, 4, 4], &mut r), y0: Tensor::randn([1, 4, 4], &mut r) })
            .collect();
        let cfg = VsdConfig { steps: 2, batch_size: 2, k: 1, lr: 0.0 + 1e-3, ..Default::default() };
        let ctx = DistillContext::new(&s, &teacher, &IdentityCodec, &data, vec![5]).unwrap();
        let mut st = DistillState::from_teacher(&teacher, &cfg.as_distill(&s));
        // zero fake learning rate freezes the fake at the teacher
        st.opt_f.cfg.lr = 0.0;
        let before = st.generator.params().to_vec();
        distill_vsd_with(&mut st, &cfg, &ctx, |_| Ok(())).unwrap();
        assert_eq!(st.generator.params(), before.as_slice());
        assert_eq!((st.fake_steps, st.gen_steps), (2, 2));
    }
}
