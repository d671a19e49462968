//! Teacher training: regress `x0` from `(x_t, y0, t)` with `x_t` drawn from
//! the forward marginal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::codec::LatentCodec;
use crate::data::Dataset;
use crate::diffusion::{marginal_params, sample_gaussian, PairedSample};
use crate::error::{Error, Result};
use crate::checkpoint::Checkpoint;
use crate::nn::{ArchSpec, UNet};
use crate::optim::{AdamConfig, AdamW};
use crate::predictors::Predictor;
use crate::rng;
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Multiply each term by `w_t` (and drop `t = 1`).
    pub weighted: bool,
    pub seed: u64,
    /// Network size; the fake and generator copy the teacher's architecture.
    pub width: usize,
    pub bottleneck: usize,
    pub embed_dim: usize,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        let a = ArchSpec::default();
        TeacherTrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.95,
            weighted: false,
            seed: 0,
            width: a.width,
            bottleneck: a.bottleneck,
            embed_dim: a.embed_dim,
        }
    }
}

impl TeacherTrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "teacher needs steps >= 1, batch_size >= 1, lr > 0 (got {}, {}, {})",
                self.steps, self.batch_size, self.lr
            )));
        }
        Ok(())
    }

    pub fn arch(&self, shape: [usize; 3]) -> Result<ArchSpec> {
        if shape[1] != shape[2] {
            return Err(Error::Config(format!("the network needs square samples, got {shape:?}")));
        }
        let spec = ArchSpec {
            channels: shape[0],
            size: shape[1],
            width: self.width,
            bottleneck: self.bottleneck,
            embed_dim: self.embed_dim,
            noise_input: false,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Freshly initialized teacher for samples of `shape`.
    pub fn init_net(&self, shape: [usize; 3]) -> Result<UNet> {
        UNet::new(self.arch(shape)?, &mut rng::derive(self.seed, &[0x1A17]))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

/// Mean squared error over tensor elements, `mean((a - b)^2)`.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).sq_norm() / a.len() as f64
}

fn draw_t<R: Rng + ?Sized>(s: &ShiftingSchedule, rng: &mut R) -> usize {
    rng.random_range(1..=s.steps())
}

/// Loss value for any predictor; `t ~ U{1..T}` and `x_t` are drawn per item.
pub fn teacher_loss_value<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    f: &dyn Predictor,
    batch: &[PairedSample],
    rng: &mut R,
    weighted: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("teacher loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for p in batch {
        let t = draw_t(s, rng);
        let x_t = sample_gaussian(&marginal_params(s, &p.x0, &p.y0, t)?, rng);
        total += s.loss_weight(t, weighted) * mse(&f.predict(&x_t, &p.y0, t), &p.x0);
    }
    Ok(total / batch.len() as f64)
}

/// Loss value and parameter gradient for a network. Draws from `rng` in the
/// same order as [`teacher_loss_value`].
pub fn teacher_loss<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    f: &UNet,
    batch: &[PairedSample],
    rng: &mut R,
    weighted: bool,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("teacher loss needs a nonempty batch".into()));
    }
    let mut grad = vec![0.0; f.num_params()];
    let mut total = 0.0;
    let b = batch.len() as f64;
    for p in batch {
        let t = draw_t(s, rng);
        let x_t = sample_gaussian(&marginal_params(s, &p.x0, &p.y0, t)?, rng);
        let w = s.loss_weight(t, weighted);
        let (pred, cache) = f.forward(&x_t, &p.y0, None, t);
        let n = pred.len() as f64;
        total += w * mse(&pred, &p.x0);
        if w != 0.0 {
            let d = pred.zip_map(&p.x0, |a, c| 2.0 * w * (a - c) / (n * b));
            f.backward(&cache, &d, &mut grad);
        }
    }
    Ok((total / b, grad))
}

/// Pairs mapped into model space.
pub fn encode_dataset(codec: &dyn LatentCodec, data: &Dataset) -> Vec<PairedSample> {
    data.pairs.iter().map(|p| PairedSample { x0: codec.encode(&p.x0), y0: codec.encode(&p.y0) }).collect()
}

/// Optimizer and step counter of a teacher run, so it can be resumed.
#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub net: UNet,
    pub opt: AdamW,
    pub step: usize,
    /// `(step, loss)` for every completed step.
    pub log: Vec<(usize, f64)>,
}

impl TeacherRun {
    pub fn new(net: UNet, cfg: &TeacherTrainConfig) -> Self {
        let opt = AdamW::new(cfg.adam(), net.num_params());
        TeacherRun { net, opt, step: 0, log: Vec::new() }
    }

    /// Run until `cfg.steps` total steps have completed. Each step's batch
    /// and noise depend only on `(cfg.seed, step)`.
    pub fn run(&mut self, s: &ShiftingSchedule, cfg: &TeacherTrainConfig, data: &[PairedSample]) -> Result<()> {
        cfg.check()?;
        if data.is_empty() {
            return Err(Error::Config("teacher training needs data".into()));
        }
        while self.step < cfg.steps {
            let step = self.step + 1;
            let mut r = rng::derive(cfg.seed, &[0x7EAC, step as u64]);
            let batch: Vec<PairedSample> =
                (0..cfg.batch_size).map(|_| data[r.random_range(0..data.len())].clone()).collect();
            let (loss, grad) = teacher_loss(s, &self.net, &batch, &mut r, cfg.weighted)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { step, detail: format!("teacher loss = {loss}") });
            }
            self.opt.step(self.net.params_mut(), &grad);
            self.step = step;
            self.log.push((step, loss));
        }
        Ok(())
    }
}

impl TeacherRun {
    /// Network, optimizer moments and step count. The loss log lives in its
    /// own CSV.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let (m, v, t) = self.opt.state();
        let mut params = self.net.params().to_vec();
        params.extend_from_slice(m);
        params.extend_from_slice(v);
        Checkpoint::new(self.net.spec().to_text(), params)
            .exact()
            .with_entry("kind", "teacher_run")
            .with_entry("step", self.step)
            .with_entry("adam_steps", t)
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TeacherTrainConfig) -> Result<Self> {
        if ck.get("kind") != Some("teacher_run") {
            return Err(Error::Config("checkpoint does not hold a teacher run".into()));
        }
        let spec = ArchSpec::from_text(&ck.header)?;
        let field = |k: &str| -> Result<u64> {
            ck.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("teacher run checkpoint lacks {k}")))
        };
        let (step, adam_steps) = (field("step")? as usize, field("adam_steps")?);
        let n = ck.params.len() / 3;
        if ck.params.len() != 3 * n {
            return Err(Error::Config("teacher run checkpoint has a ragged parameter block".into()));
        }
        let net = UNet::from_params(spec, ck.params[..n].to_vec())?;
        let mut opt = AdamW::new(cfg.adam(), n);
        opt.restore(ck.params[n..2 * n].to_vec(), ck.params[2 * n..].to_vec(), adam_steps);
        Ok(TeacherRun { net, opt, step, log: Vec::new() })
    }
}

/// Train a teacher from `init` on model-space pairs.
pub fn train_teacher(
    s: &ShiftingSchedule,
    cfg: &TeacherTrainConfig,
    init: UNet,
    data: &[PairedSample],
) -> Result<(UNet, Vec<(usize, f64)>)> {
    let mut run = TeacherRun::new(init, cfg);
    run.run(s, cfg, data)?;
    Ok((run.net, run.log))
}

pub fn loss_log_csv(log: &[(usize, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (s, l) in log {
        out.push_str(&format!("{s},{l:.9e}\n"));
    }
    out
}

/// Mean of the first and last 10% windows of a loss log.
pub fn window_means(log: &[(usize, f64)]) -> (f64, f64) {
    let n = (log.len() / 10).max(1);
    let mean = |w: &[(usize, f64)]| w.iter().map(|x| x.1).sum::<f64>() / w.len() as f64;
    (mean(&log[..n]), mean(&log[log.len() - n..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleShape;

    struct Perfect(Tensor);
    impl Predictor for Perfect {
        fn predict(&self, _: &Tensor, _: &Tensor, _: usize) -> Tensor {
            self.0.clone()
        }
    }

    fn sched() -> ShiftingSchedule {
        ShiftingSchedule::build(5, 0.01, 0.99, 1.0, ScheduleShape::LogLinear).unwrap()
    }

    #[test]
    fn perfect_and_zero_predictors() {
        let x0 = Tensor::full([1, 2, 2], 0.3);
        let p = PairedSample { x0: x0.clone(), y0: Tensor::zeros([1, 2, 2]) };
        let l = teacher_loss_value(&sched(), &Perfect(x0), &[p], &mut rng::stream(0), false).unwrap();
        assert_eq!(l, 0.0);
        let z = PairedSample { x0: Tensor::zeros([1, 2, 2]), y0: Tensor::full([1, 2, 2], 0.5) };
        let l = teacher_loss_value(&sched(), &Perfect(Tensor::zeros([1, 2, 2])), &[z], &mut rng::stream(0), true).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn constant_predictor_matches_hand_value() {
        // unweighted: mean over items of (c - x0)^2, independent of t and x_t
        let c = 0.25;
        let batch: Vec<PairedSample> = [-0.5, 0.0, 1.0]
            .iter()
            .map(|&v| PairedSample { x0: Tensor::scalar(v), y0: Tensor::scalar(0.1) })
            .collect();
        let l = teacher_loss_value(&sched(), &Perfect(Tensor::scalar(c)), &batch, &mut rng::stream(3), false).unwrap();
        let want = ((c + 0.5f64).powi(2) + c * c + (c - 1.0f64).powi(2)) / 3.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = ArchSpec { size: 4, width: 3, bottleneck: 4, embed_dim: 4, ..Default::default() };
        let net = UNet::new(spec, &mut rng::stream(1)).unwrap();
        let mut r = rng::stream(2);
        let batch: Vec<PairedSample> = (0..2)
            .map(|_| PairedSample { x0: Tensor::randn([1, 4, 4], &mut r), y0: Tensor::randn([1, 4, 4], &mut r) })
            .collect();
        let s = sched();
        let (_, g) = teacher_loss(&s, &net, &batch, &mut rng::stream(9), true).unwrap();
        let h = 1e-5;
        for i in (0..net.num_params()).step_by(17) {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let (lp, _) = teacher_loss(&s, &p, &batch, &mut rng::stream(9), true).unwrap();
            p.params_mut()[i] -= 2.0 * h;
            let (lm, _) = teacher_loss(&s, &p, &batch, &mut rng::stream(9), true).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn resumed_run_continues_the_step_count() {
        let cfg = TeacherTrainConfig { steps: 2, batch_size: 2, width: 2, bottleneck: 2, embed_dim: 2, ..Default::default() };
        let mut r = rng::stream(4);
        let data: Vec<PairedSample> =
            (0..3).map(|_| PairedSample { x0: Tensor::randn([1, 4, 4], &mut r), y0: Tensor::randn([1, 4, 4], &mut r) }).collect();
        let mut run = TeacherRun::new(cfg.init_net([1, 4, 4]).unwrap(), &cfg);
        run.run(&sched(), &cfg, &data).unwrap();
        let ck = Checkpoint::from_bytes(std::path::Path::new("mem"), &run.to_checkpoint().to_bytes()).unwrap();
        let mut back = TeacherRun::from_checkpoint(&ck, &cfg).unwrap();
        assert_eq!(back.step, 2);
        assert_eq!(back.opt.steps(), 2);
        back.run(&sched(), &TeacherTrainConfig { steps: 4, ..cfg.clone() }, &data).unwrap();
        assert_eq!(back.log.iter().map(|l| l.0).collect::<Vec<_>>(), [3, 4]);
    }
}
