//! The residual-shifting schedule `{eta_t}`, its increments `alpha_t` and
//! the per-step loss weights `w_t`.
//!
//! Timesteps are 1-based throughout the crate: `t` ranges over `1..=T` and
//! `eta(0)` is defined as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    /// Geometric in eta: `eta_t = eta_1 * (eta_T / eta_1)^((t-1)/(T-1))`.
    LogLinear,
    Linear,
}

/// Bounds checked by [`ShiftingSchedule::validate`].
#[derive(Debug, Clone, Copy)]
pub struct ScheduleBounds {
    pub eta_low_max: f64,
    pub eta_high_min: f64,
}

impl Default for ScheduleBounds {
    fn default() -> Self {
        ScheduleBounds { eta_low_max: 0.05, eta_high_min: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftingSchedule {
    // index i holds eta_{i+1}
    eta: Vec<f64>,
    alpha: Vec<f64>,
    kappa: f64,
}

impl ShiftingSchedule {
    pub fn build(
        steps: usize,
        eta_first: f64,
        eta_last: f64,
        kappa: f64,
        shape: ScheduleShape,
    ) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got T = {steps}")));
        }
        if !(eta_first > 0.0 && eta_first < eta_last && eta_last <= 1.0) {
            return Err(Error::Config(format!(
                "schedule endpoints must satisfy 0 < eta_1 < eta_T <= 1, got eta_1 = {eta_first}, eta_T = {eta_last}"
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be > 0, got {kappa}")));
        }
        let denom = (steps - 1) as f64;
        let mut eta: Vec<f64> = (0..steps)
            .map(|i| {
                let frac = i as f64 / denom;
                match shape {
                    ScheduleShape::LogLinear => eta_first * (eta_last / eta_first).powf(frac),
                    ScheduleShape::Linear => eta_first + (eta_last - eta_first) * frac,
                }
            })
            .collect();
        // pin the endpoints against powf rounding
        eta[0] = eta_first;
        eta[steps - 1] = eta_last;
        Self::from_eta(eta, kappa)
    }

    /// Build from an explicit `eta_1..eta_T` sequence. Only the structural
    /// preconditions are enforced here; bounds go through [`Self::validate`].
    /// `kappa = 0` is accepted as the noise-free limit.
    pub fn from_eta(eta: Vec<f64>, kappa: f64) -> Result<Self> {
        if eta.len() < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got T = {}", eta.len())));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be >= 0, got {kappa}")));
        }
        if let Some(bad) = eta.iter().position(|e| !(e.is_finite() && *e > 0.0 && *e <= 1.0)) {
            return Err(Error::Config(format!(
                "eta must lie in (0, 1], got eta_{} = {}",
                bad + 1,
                eta[bad]
            )));
        }
        let alpha = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| if i == 0 { e } else { e - eta[i - 1] })
            .collect();
        Ok(ShiftingSchedule { eta, alpha, kappa })
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::from_eta(self.eta.clone(), kappa)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.eta.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `eta_t` for `t` in `0..=T`; `eta_0 = 0`.
    pub fn eta(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.eta[t - 1]
        }
    }

    /// `alpha_t = eta_t - eta_{t-1}` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::Index { t, lo, hi: self.steps() });
        }
        Ok(())
    }

    /// `w_t = alpha_t / (2 kappa^2 eta_t eta_{t-1})`, defined for `2 <= t <= T`.
    pub fn weight_of(&self, t: usize) -> Result<f64> {
        self.check_t(t, 2)?;
        Ok(self.alpha(t) / (2.0 * self.kappa * self.kappa * self.eta(t) * self.eta(t - 1)))
    }

    /// Weight applied to a per-step loss term. Unweighted mode gives 1 for
    /// every step; weighted mode gives `w_t` and drops `t = 1`.
    pub fn loss_weight(&self, t: usize, weighted: bool) -> f64 {
        if !weighted {
            1.0
        } else if t < 2 {
            0.0
        } else {
            self.weight_of(t).unwrap_or(0.0)
        }
    }

    pub fn validate(&self, bounds: &ScheduleBounds) -> Vec<String> {
        let mut out = Vec::new();
        for t in 2..=self.steps() {
            if self.eta(t) <= self.eta(t - 1) {
                out.push(format!("eta not strictly increasing at t={t}"));
            }
        }
        if self.eta(1) > bounds.eta_low_max {
            out.push(format!("eta_1 = {} exceeds eta_low_max = {}", self.eta(1), bounds.eta_low_max));
        }
        if self.eta(self.steps()) < bounds.eta_high_min {
            out.push(format!(
                "eta_T = {} below eta_high_min = {}",
                self.eta(self.steps()),
                bounds.eta_high_min
            ));
        }
        for t in 1..=self.steps() {
            if self.alpha(t) <= 0.0 {
                out.push(format!("alpha_{t} = {} is not positive", self.alpha(t)));
            }
        }
        for t in 2..=self.steps() {
            if let Ok(w) = self.weight_of(t) {
                if !(w > 0.0) {
                    out.push(format!("w_{t} = {w} is not positive"));
                }
            }
        }
        out
    }

    /// The `(t, eta_t, alpha_t, w_t)` table as CSV; `w_1` is left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,eta,alpha,w\n");
        for t in 1..=self.steps() {
            let w = self.weight_of(t).map(|w| format!("{w:.17e}")).unwrap_or_default();
            s.push_str(&format!("{t},{:.17e},{:.17e},{w}\n", self.eta(t), self.alpha(t)));
        }
        s
    }

    /// `N` evenly placed timesteps `t_i = round(i * T / N)`, with `t_N = T`.
    pub fn evenly_placed(&self, n: usize) -> Result<Vec<usize>> {
        evenly_placed(self.steps(), n)
    }
}

pub fn evenly_placed(steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > steps {
        return Err(Error::Config(format!("need 1 <= N <= T, got N = {n}, T = {steps}")));
    }
    let mut out: Vec<usize> = (1..=n)
        .map(|i| ((i * steps) as f64 / n as f64).round().max(1.0) as usize)
        .collect();
    out.dedup();
    *out.last_mut().unwrap() = steps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_linear_example() {
        let s = ShiftingSchedule::build(2, 0.5, 1.0, 1.0, ScheduleShape::Linear).unwrap();
        assert_eq!(s.etas(), &[0.5, 1.0]);
        assert_eq!((s.alpha(1), s.alpha(2)), (0.5, 0.5));
        assert_eq!(s.weight_of(2).unwrap(), 0.5);
    }

    #[test]
    fn default_log_linear_telescopes() {
        let s = ShiftingSchedule::build(15, 0.001, 0.999, 1.0, ScheduleShape::LogLinear).unwrap();
        assert_eq!(s.eta(15), 0.999);
        let sum: f64 = (1..=15).map(|t| s.alpha(t)).sum();
        assert!((sum - 0.999).abs() < 1e-15);
        assert!(s.validate(&ScheduleBounds::default()).is_empty());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(ShiftingSchedule::build(1, 0.1, 0.9, 1.0, ScheduleShape::Linear).is_err());
        assert!(ShiftingSchedule::build(5, 0.9, 0.1, 1.0, ScheduleShape::Linear).is_err());
        let err = ShiftingSchedule::build(5, 0.1, 0.9, 0.0, ScheduleShape::Linear).unwrap_err();
        assert!(err.to_string().contains("kappa"));
    }

    #[test]
    fn weight_hand_value_and_kappa_scaling() {
        let s = ShiftingSchedule::from_eta(vec![0.25, 0.5, 1.0], 1.0).unwrap();
        assert_eq!(s.weight_of(2).unwrap(), 1.0);
        let s2 = s.with_kappa(2.0).unwrap();
        assert_eq!(s2.weight_of(2).unwrap(), 0.25);
        assert!(matches!(s.weight_of(1), Err(Error::Index { t: 1, .. })));
        assert!(s.weight_of(4).is_err());
    }

    #[test]
    fn validate_reports_violations() {
        let s = ShiftingSchedule::from_eta(vec![0.01, 0.3, 0.2, 0.99], 1.0).unwrap();
        let v = s.validate(&ScheduleBounds::default());
        assert!(v.iter().any(|m| m == "eta not strictly increasing at t=3"), "{v:?}");
        let low = ShiftingSchedule::from_eta(vec![0.01, 0.5], 1.0).unwrap();
        assert_eq!(low.validate(&ScheduleBounds::default()).len(), 1);
    }

    #[test]
    fn evenly_placed_sets() {
        assert_eq!(evenly_placed(15, 4).unwrap(), vec![4, 8, 11, 15]);
        assert_eq!(evenly_placed(15, 1).unwrap(), vec![15]);
        assert_eq!(evenly_placed(15, 15).unwrap(), (1..=15).collect::<Vec<_>>());
        assert!(evenly_placed(15, 0).is_err());
    }
}
