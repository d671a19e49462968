//! Residual-shifting kernels: forward transition, marginal, posterior,
//! prior and the reverse sampler.

use rand::Rng;

use crate::error::{Error, Result};
use crate::predictors::Predictor;
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

/// An (HR, upsampled LR) pair in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x0: Tensor,
    pub y0: Tensor,
}

impl PairedSample {
    pub fn new(x0: Tensor, y0: Tensor) -> Result<Self> {
        x0.check_same_shape(&y0)?;
        if !x0.is_finite() || !y0.is_finite() {
            return Err(Error::Config("paired sample has non-finite entries".into()));
        }
        Ok(PairedSample { x0, y0 })
    }

    pub fn residual(&self) -> Tensor {
        self.y0.sub(&self.x0)
    }
}

/// Isotropic Gaussian `N(mean, var * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    /// Take the posterior mean at every step.
    Deterministic,
}

/// `q(x_t | x0, y0) = N(x0 + eta_t (y0 - x0), kappa^2 eta_t I)`.
pub fn marginal_params(
    s: &ShiftingSchedule,
    x0: &Tensor,
    y0: &Tensor,
    t: usize,
) -> Result<GaussianParams> {
    s.check_t(t, 1)?;
    x0.check_same_shape(y0)?;
    let eta = s.eta(t);
    Ok(GaussianParams {
        mean: x0.zip_map(y0, |a, b| a + eta * (b - a)),
        var: s.kappa() * s.kappa() * eta,
    })
}

/// `q(x_t | x_{t-1}, y0) = N(x_{t-1} + alpha_t e0, kappa^2 alpha_t I)`.
pub fn transition_params(
    s: &ShiftingSchedule,
    x_prev: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    t: usize,
) -> Result<GaussianParams> {
    s.check_t(t, 1)?;
    x0.check_same_shape(y0)?;
    x_prev.check_same_shape(x0)?;
    let alpha = s.alpha(t);
    let mut mean = x_prev.clone();
    mean.axpy(alpha, &y0.sub(x0));
    Ok(GaussianParams { mean, var: s.kappa() * s.kappa() * alpha })
}

/// `q(x_{t-1} | x_t, x0, y0)` for `2 <= t <= T`.
pub fn posterior_params(
    s: &ShiftingSchedule,
    x_t: &Tensor,
    x0: &Tensor,
    t: usize,
) -> Result<GaussianParams> {
    s.check_t(t, 2)?;
    jump_params(s, x_t, x0, t, t - 1)
}

/// `q(x_s | x_t, x0, y0)` for `s < t`: mean `(eta_s/eta_t) x_t + (1 - eta_s/eta_t) x0`,
/// variance `kappa^2 (eta_s/eta_t)(eta_t - eta_s)`. Reduces to the one-step
/// posterior for `s = t - 1`; `s = 0` collapses onto `x0`.
pub fn jump_params(
    s: &ShiftingSchedule,
    x_t: &Tensor,
    x0: &Tensor,
    t: usize,
    to: usize,
) -> Result<GaussianParams> {
    s.check_t(t, 1)?;
    if to >= t {
        return Err(Error::Index { t: to, lo: 0, hi: t - 1 });
    }
    x_t.check_same_shape(x0)?;
    let (eta_t, eta_s) = (s.eta(t), s.eta(to));
    let ratio = eta_s / eta_t;
    let (a, b) = if to + 1 == t {
        (ratio, s.alpha(t) / eta_t)
    } else {
        (ratio, 1.0 - ratio)
    };
    let var = if to + 1 == t {
        s.kappa() * s.kappa() * ratio * s.alpha(t)
    } else {
        s.kappa() * s.kappa() * ratio * (eta_t - eta_s)
    };
    Ok(GaussianParams { mean: x_t.zip_map(x0, |xt, x0| a * xt + b * x0), var })
}

pub fn sample_gaussian<R: Rng + ?Sized>(p: &GaussianParams, rng: &mut R) -> Tensor {
    if p.var == 0.0 {
        return p.mean.clone();
    }
    let sd = p.var.sqrt();
    let z = Tensor::randn(p.mean.shape(), rng);
    p.mean.zip_map(&z, |m, z| m + sd * z)
}

/// Prior `p(x_T | y0) = N(y0, kappa^2 eta_T I)`, equal to the marginal at `T`
/// whenever `eta_T = 1`.
pub fn prior_params(s: &ShiftingSchedule, y0: &Tensor) -> GaussianParams {
    GaussianParams { mean: y0.clone(), var: s.kappa() * s.kappa() * s.eta(s.steps()) }
}

pub fn sample_prior<R: Rng + ?Sized>(s: &ShiftingSchedule, y0: &Tensor, rng: &mut R) -> Tensor {
    sample_gaussian(&prior_params(s, y0), rng)
}

/// Reverse sampler over a decreasing subset of timesteps. Starts at the prior,
/// predicts `x0` at each visited step and jumps to the next one through the
/// posterior; the last visited step returns the prediction itself.
pub fn reverse_sample<R: Rng + ?Sized>(
    s: &ShiftingSchedule,
    f: &dyn Predictor,
    y0: &Tensor,
    steps: &[usize],
    mode: SampleMode,
    rng: &mut R,
) -> Result<Tensor> {
    if steps.is_empty() {
        return Err(Error::Config("reverse sampling needs at least one step".into()));
    }
    for w in steps.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config(format!("sampling steps must decrease, got {steps:?}")));
        }
    }
    for &t in steps {
        s.check_t(t, 1)?;
    }
    let mut x = sample_prior(s, y0, rng);
    for (i, &t) in steps.iter().enumerate() {
        let x0_hat = f.predict(&x, y0, t);
        match steps.get(i + 1) {
            None => return Ok(x0_hat),
            Some(&next) => {
                let p = jump_params(s, &x, &x0_hat, t, next)?;
                x = match mode {
                    SampleMode::Stochastic => sample_gaussian(&p, rng),
                    SampleMode::Deterministic => p.mean,
                };
            }
        }
    }
    unreachable!("loop returns on the last step")
}

/// All steps `T, T-1, ..., 1`.
pub fn full_steps(s: &ShiftingSchedule) -> Vec<usize> {
    (1..=s.steps()).rev().collect()
}

/// `k` roughly evenly spaced steps from `T` down to 1.
pub fn strided_steps(s: &ShiftingSchedule, k: usize) -> Result<Vec<usize>> {
    let mut v = crate::schedule::evenly_placed(s.steps(), k)?;
    v.reverse();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::schedule::ScheduleShape;

    fn sc(x: f64) -> Tensor {
        Tensor::scalar(x)
    }

    #[test]
    fn marginal_examples() {
        let s = ShiftingSchedule::from_eta(vec![0.25, 0.5, 1.0], 2.0).unwrap();
        let p = marginal_params(&s, &sc(0.0), &sc(2.0), 1).unwrap();
        assert_eq!((p.mean.data()[0], p.var), (0.5, 1.0));
        let s1 = ShiftingSchedule::from_eta(vec![0.5, 1.0], 0.0).unwrap();
        let p = marginal_params(&s1, &sc(0.0), &sc(2.0), 1).unwrap();
        assert_eq!((p.mean.data()[0], p.var), (1.0, 0.0));
        let p = marginal_params(&s1, &sc(0.3), &sc(-0.7), 2).unwrap();
        assert_eq!(p.mean.data()[0], -0.7);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let s = ShiftingSchedule::from_eta(vec![0.5, 1.0], 1.0).unwrap();
        let a = Tensor::zeros([1, 2, 2]);
        let b = Tensor::zeros([1, 4, 4]);
        assert!(matches!(marginal_params(&s, &a, &b, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn transition_examples() {
        let s = ShiftingSchedule::from_eta(vec![0.5, 1.0], 1.0).unwrap();
        let p = transition_params(&s, &sc(0.0), &sc(0.0), &sc(2.0), 2).unwrap();
        assert_eq!(p.mean.data()[0], 1.0);
        let s0 = s.with_kappa(0.0).unwrap();
        assert_eq!(transition_params(&s0, &sc(0.0), &sc(0.0), &sc(2.0), 2).unwrap().var, 0.0);
        let p = transition_params(&s, &sc(0.4), &sc(1.0), &sc(1.0), 2).unwrap();
        assert_eq!(p.mean.data()[0], 0.4);
        assert_eq!(p.var, 0.5);
    }

    #[test]
    fn posterior_examples() {
        let s = ShiftingSchedule::from_eta(vec![0.25, 0.5, 1.0], 1.0).unwrap();
        let p = posterior_params(&s, &sc(1.0), &sc(0.0), 2).unwrap();
        assert_eq!(p.mean.data()[0], 0.5);
        assert_eq!(p.var, 0.125);
        let p = posterior_params(&s, &sc(0.7), &sc(0.7), 3).unwrap();
        assert!((p.mean.data()[0] - 0.7).abs() < 1e-15);
        assert!(matches!(posterior_params(&s, &sc(0.0), &sc(0.0), 1), Err(Error::Index { .. })));
    }

    #[test]
    fn jump_matches_posterior_for_adjacent_steps() {
        let s = ShiftingSchedule::build(6, 0.01, 0.99, 1.3, ScheduleShape::LogLinear).unwrap();
        let a = posterior_params(&s, &sc(0.3), &sc(-0.2), 4).unwrap();
        let b = jump_params(&s, &sc(0.3), &sc(-0.2), 4, 3).unwrap();
        assert_eq!(a, b);
        let z = jump_params(&s, &sc(0.3), &sc(-0.2), 4, 0).unwrap();
        assert_eq!((z.mean.data()[0], z.var), (-0.2, 0.0));
    }

    #[test]
    fn zero_variance_sample_is_the_mean() {
        let p = GaussianParams { mean: sc(1.25), var: 0.0 };
        assert_eq!(sample_gaussian(&p, &mut rng::stream(1)).data()[0], 1.25);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = GaussianParams { mean: Tensor::zeros([1, 4, 4]), var: 2.0 };
        let a = sample_gaussian(&p, &mut rng::stream(9));
        let b = sample_gaussian(&p, &mut rng::stream(9));
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments_within_three_standard_errors() {
        let n = 100_000;
        let p = GaussianParams { mean: Tensor::full([1, 1, n], 0.7), var: 2.5 };
        let x = sample_gaussian(&p, &mut rng::stream(3));
        let mean = x.mean();
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se_mean = (2.5 / n as f64).sqrt();
        let se_var = 2.5 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((mean - 0.7).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - 2.5).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn prior_moments_and_collapse() {
        let s = ShiftingSchedule::from_eta(vec![0.3, 1.0], 0.0).unwrap();
        let y = Tensor::from_vec([1, 1, 3], vec![0.1, -0.4, 0.9]);
        assert_eq!(sample_prior(&s, &y, &mut rng::stream(0)), y);

        let s = ShiftingSchedule::from_eta(vec![0.3, 0.8], 0.5).unwrap();
        let n = 100_000;
        let x = sample_prior(&s, &Tensor::full([1, 1, n], -0.3), &mut rng::stream(4));
        let mean = x.mean();
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want = 0.25 * 0.8;
        assert!((mean + 0.3).abs() < 3.0 * (want / n as f64).sqrt());
        assert!((var - want).abs() < 3.0 * want * (2.0 / n as f64).sqrt());
    }

    struct Perfect(Tensor);
    impl Predictor for Perfect {
        fn predict(&self, _: &Tensor, _: &Tensor, _: usize) -> Tensor {
            self.0.clone()
        }
    }

    struct Probe;
    impl Predictor for Probe {
        fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor {
            x_t.add(y0).scale(t as f64)
        }
    }

    #[test]
    fn perfect_predictor_recovers_x0_on_every_subset() {
        let s = ShiftingSchedule::build(15, 0.001, 0.999, 1.0, ScheduleShape::LogLinear).unwrap();
        let x0 = Tensor::from_vec([1, 2, 2], vec![0.1, -0.5, 0.25, 0.9]);
        let y0 = Tensor::from_vec([1, 2, 2], vec![0.3, 0.0, -0.2, 0.5]);
        let f = Perfect(x0.clone());
        for steps in [vec![15], vec![15, 8, 1], full_steps(&s), vec![12, 3]] {
            let out = reverse_sample(&s, &f, &y0, &steps, SampleMode::Deterministic, &mut rng::stream(2))
                .unwrap();
            assert_eq!(out, x0);
        }
    }

    #[test]
    fn single_step_returns_the_prediction_at_prior_draw() {
        let s = ShiftingSchedule::build(5, 0.01, 0.99, 1.0, ScheduleShape::LogLinear).unwrap();
        let y0 = Tensor::from_vec([1, 1, 2], vec![0.2, -0.1]);
        let out = reverse_sample(&s, &Probe, &y0, &[5], SampleMode::Stochastic, &mut rng::stream(8)).unwrap();
        let x_t = sample_prior(&s, &y0, &mut rng::stream(8));
        assert_eq!(out, x_t.add(&y0).scale(5.0));
    }

    #[test]
    fn rejects_empty_or_unordered_steps() {
        let s = ShiftingSchedule::build(5, 0.01, 0.99, 1.0, ScheduleShape::LogLinear).unwrap();
        let y0 = Tensor::zeros([1, 1, 1]);
        assert!(reverse_sample(&s, &Probe, &y0, &[], SampleMode::Stochastic, &mut rng::stream(0)).is_err());
        assert!(reverse_sample(&s, &Probe, &y0, &[2, 4], SampleMode::Stochastic, &mut rng::stream(0)).is_err());
    }
}
