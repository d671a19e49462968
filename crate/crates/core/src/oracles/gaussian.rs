//! Scalar joint-Gaussian toy problem with closed-form conditioning.
//!
//! `x0 ~ N(m, v)`, `y0 = a x0 + b + sigma_d n`, and `x_t` drawn from the
//! residual-shifting marginal `x_t = (1 - eta_t) x0 + eta_t y0 + kappa sqrt(eta_t) eps`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::ShiftingSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianProblem {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub a: f64,
    pub b: f64,
    /// `0` means `y0` is a deterministic function of `x0`.
    pub sigma_d: f64,
    pub schedule: ShiftingSchedule,
}

impl AnalyticGaussianProblem {
    pub fn new(prior_mean: f64, prior_var: f64, a: f64, b: f64, sigma_d: f64, schedule: ShiftingSchedule) -> Result<Self> {
        if !(prior_var > 0.0) || !(sigma_d >= 0.0) {
            return Err(Error::Config(format!(
                "need prior_var > 0 and sigma_d >= 0, got {prior_var}, {sigma_d}"
            )));
        }
        Ok(AnalyticGaussianProblem { prior_mean, prior_var, a, b, sigma_d, schedule })
    }

    /// `(mean, var)` of `x0 | y0`.
    pub fn given_y0(&self, y0: f64) -> (f64, f64) {
        if self.sigma_d == 0.0 {
            if self.a != 0.0 {
                return ((y0 - self.b) / self.a, 0.0);
            }
            return (self.prior_mean, self.prior_var);
        }
        let sd2 = self.sigma_d * self.sigma_d;
        let prec = 1.0 / self.prior_var + self.a * self.a / sd2;
        let mean = (self.prior_mean / self.prior_var + self.a * (y0 - self.b) / sd2) / prec;
        (mean, 1.0 / prec)
    }

    /// `(mean, var)` of `x0 | x_t, y0`.
    pub fn posterior(&self, x_t: f64, y0: f64, t: usize) -> (f64, f64) {
        let (m, v) = self.given_y0(y0);
        if v == 0.0 {
            return (m, 0.0);
        }
        let eta = self.schedule.eta(t);
        let k2 = self.schedule.kappa() * self.schedule.kappa();
        let gain = 1.0 - eta;
        if gain == 0.0 {
            return (m, v);
        }
        let obs = x_t - eta * y0;
        let noise = k2 * eta;
        if noise == 0.0 {
            return (obs / gain, 0.0);
        }
        let prec = 1.0 / v + gain * gain / noise;
        ((m / v + gain * obs / noise) / prec, 1.0 / prec)
    }

    pub fn posterior_mean(&self, x_t: f64, y0: f64, t: usize) -> f64 {
        self.posterior(x_t, y0, t).0
    }

    /// Draw one `(x0, y0, x_t)` triple.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> (f64, f64, f64) {
        let z = |r: &mut R| r.sample::<f64, _>(StandardNormal);
        let x0 = self.prior_mean + self.prior_var.sqrt() * z(rng);
        let y0 = self.a * x0 + self.b + self.sigma_d * z(rng);
        let eta = self.schedule.eta(t);
        let x_t = (1.0 - eta) * x0 + eta * y0 + self.schedule.kappa() * eta.sqrt() * z(rng);
        (x0, y0, x_t)
    }
}

/// Closed-form `E[x0 | x_t, y0]` for the analytic problem.
pub fn analytic_posterior_mean(p: &AnalyticGaussianProblem, x_t: f64, y0: f64, t: usize) -> f64 {
    p.posterior_mean(x_t, y0, t)
}
