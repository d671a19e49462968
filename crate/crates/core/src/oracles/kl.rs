//! Gaussian KL machinery: per-step coefficients, scalar log-densities and a
//! joint-versus-per-step decomposition check on affine scalar chains.

use nalgebra::{DMatrix, DVector};

use crate::diffusion::GaussianParams;
use crate::error::{Error, Result};
use crate::oracles::quadrature::{refine, QuadratureSpec};
use crate::schedule::ShiftingSchedule;

/// `KL(N(m1, v1) || N(m2, v2))` for scalars.
pub fn kl_gaussian(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)
}

/// Coefficient `c` such that the KL between two reverse-step Gaussians whose
/// `x0` predictions differ by `d` equals `c d^2`. Evaluated through the
/// generic KL formula at `d = 1`, so it is coded independently of the
/// schedule's own weight.
pub fn kl_step_coefficient(s: &ShiftingSchedule, t: usize) -> Result<f64> {
    s.check_t(t, 2)?;
    let (eta, eta_prev) = (s.eta(t), s.eta(t - 1));
    let alpha = eta - eta_prev;
    let var = s.kappa() * s.kappa() * (eta_prev / eta) * alpha;
    // posterior means differ by (alpha / eta) * d
    let shift = alpha / eta;
    Ok(kl_gaussian(shift, var, 0.0, var))
}

/// Sum of elementwise Gaussian log-densities of `x` under `p`.
pub fn scalar_log_density(p: &GaussianParams, x: &[f64]) -> Result<f64> {
    if !(p.var > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    if x.len() != p.mean.len() {
        return Err(Error::Config(format!("density point has {} entries, mean has {}", x.len(), p.mean.len())));
    }
    let norm = -0.5 * (2.0 * std::f64::consts::PI * p.var).ln();
    Ok(p.mean.data().iter().zip(x).map(|(m, v)| norm - 0.5 * (v - m).powi(2) / p.var).sum())
}

/// Scalar predictor `f(x, y0, t) = a_t x + b_t y0 + c_t`. Index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineChain {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl AffineChain {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.len() != c.len() {
            return Err(Error::Config("affine chain coefficient lengths differ".into()));
        }
        Ok(AffineChain { a, b, c })
    }

    pub fn eval(&self, x: f64, y0: f64, t: usize) -> f64 {
        self.a[t - 1] * x + self.b[t - 1] * y0 + self.c[t - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlDecompositionReport {
    pub joint: f64,
    /// Index `t - 2` holds the weighted expected KL of step `t`.
    pub per_step: Vec<f64>,
    pub per_step_sum: f64,
    pub abs_error: f64,
}

/// Joint KL between the reverse chains `x_T, ..., x_1` driven by `model` and
/// `teacher`, both started from the shared prior, against the per-step sum
/// `sum_{t>=2} w_t E_model (f - f*)^2`. The joint side is a multivariate
/// Gaussian KL; the per-step side is Gauss–Hermite quadrature.
pub fn kl_joint_decomposition_check(
    s: &ShiftingSchedule,
    teacher: &AffineChain,
    model: &AffineChain,
    y0: f64,
    spec: &QuadratureSpec,
) -> Result<KlDecompositionReport> {
    let steps = s.steps();
    if teacher.a.len() != steps || model.a.len() != steps {
        return Err(Error::Config(format!("affine chains need {steps} coefficients")));
    }
    if !(s.kappa() > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    let (m_model, c_model) = joint_gaussian(s, model, y0);
    let (m_teacher, c_teacher) = joint_gaussian(s, teacher, y0);
    let joint = kl_multivariate(&m_model, &c_model, &m_teacher, &c_teacher)?;

    let k2 = s.kappa() * s.kappa();
    let mut mean = y0;
    let mut var = k2 * s.eta(steps);
    let mut per_step = vec![0.0; steps - 1];
    for t in (2..=steps).rev() {
        let w = s.weight_of(t)?;
        let (val, _) = refine(spec, |rule| {
            rule.expect(mean, var, |x| (model.eval(x, y0, t) - teacher.eval(x, y0, t)).powi(2))
        })?;
        per_step[t - 2] = w * val;
        let (gain, offset, noise) = step_coefficients(s, model, y0, t);
        mean = gain * mean + offset;
        var = gain * gain * var + noise;
    }
    let per_step_sum: f64 = per_step.iter().sum();
    Ok(KlDecompositionReport { joint, per_step, per_step_sum, abs_error: (joint - per_step_sum).abs() })
}

/// `x_{t-1} = gain * x_t + offset + sqrt(noise) z` for the reverse step at `t`.
fn step_coefficients(s: &ShiftingSchedule, f: &AffineChain, y0: f64, t: usize) -> (f64, f64, f64) {
    let (eta, eta_prev) = (s.eta(t), s.eta(t - 1));
    let alpha = eta - eta_prev;
    let k2 = s.kappa() * s.kappa();
    let r = alpha / eta;
    let gain = eta_prev / eta + r * f.a[t - 1];
    let offset = r * (f.b[t - 1] * y0 + f.c[t - 1]);
    (gain, offset, k2 * (eta_prev / eta) * alpha)
}

/// Mean and covariance of `(x_T, x_{T-1}, ..., x_1)`.
fn joint_gaussian(s: &ShiftingSchedule, f: &AffineChain, y0: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = s.steps();
    // X = A X + k + D z, so X = (I - A)^{-1} (k + D z)
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut k = DVector::<f64>::zeros(n);
    let mut d = DMatrix::<f64>::zeros(n, n);
    k[0] = y0;
    d[(0, 0)] = (s.kappa() * s.kappa() * s.eta(n)).sqrt();
    for i in 1..n {
        let t = n - i + 1;
        let (gain, offset, noise) = step_coefficients(s, f, y0, t);
        a[(i, i - 1)] = gain;
        k[i] = offset;
        d[(i, i)] = noise.sqrt();
    }
    let inv = (DMatrix::<f64>::identity(n, n) - a).try_inverse().expect("unit lower triangular");
    let l = &inv * d;
    (&inv * k, &l * l.transpose())
}

fn kl_multivariate(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let n = m1.len() as f64;
    let ch2 = c2.clone().cholesky().ok_or(Error::DegenerateDensity)?;
    let ch1 = c1.clone().cholesky().ok_or(Error::DegenerateDensity)?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let diff = m2 - m1;
    let trace = ch2.solve(c1).trace();
    let quad = diff.dot(&ch2.solve(&diff));
    Ok(0.5 * (trace + quad - n + logdet(&ch2.l()) - logdet(&ch1.l())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn hand_coefficient() {
        let s = ShiftingSchedule::from_eta(vec![0.25, 0.5, 1.0], 1.0).unwrap();
        assert!((kl_step_coefficient(&s, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(kl_step_coefficient(&s, 1).is_err());
    }

    #[test]
    fn equal_means_have_zero_kl() {
        assert_eq!(kl_gaussian(0.3, 0.7, 0.3, 0.7), 0.0);
    }

    #[test]
    fn log_density_basics() {
        let p = GaussianParams { mean: Tensor::scalar(0.0), var: 1.0 };
        let v = scalar_log_density(&p, &[0.0]).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let q = GaussianParams { mean: Tensor::scalar(0.4), var: 0.3 };
        assert_eq!(scalar_log_density(&q, &[0.9]).unwrap(), scalar_log_density(&q, &[-0.1]).unwrap());
        let zero = GaussianParams { mean: Tensor::scalar(0.0), var: 0.0 };
        assert!(matches!(scalar_log_density(&zero, &[0.0]), Err(Error::DegenerateDensity)));
    }

    #[test]
    fn density_integrates_to_one() {
        let p = GaussianParams { mean: Tensor::scalar(0.2), var: 0.5 };
        let h = 1e-3;
        let total: f64 = (-10_000..=10_000)
            .map(|i| {
                let x = 0.2 + i as f64 * h;
                scalar_log_density(&p, &[x]).unwrap().exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    fn small_schedule() -> ShiftingSchedule {
        ShiftingSchedule::from_eta(vec![0.1, 0.3, 0.6, 0.95], 0.8).unwrap()
    }

    #[test]
    fn identical_chains_have_zero_kl() {
        let s = small_schedule();
        let f = AffineChain::new(vec![0.3; 4], vec![0.5; 4], vec![0.1; 4]).unwrap();
        let r = kl_joint_decomposition_check(&s, &f, &f, 0.4, &QuadratureSpec::default()).unwrap();
        assert!(r.joint.abs() < 1e-10 && r.per_step_sum == 0.0, "{r:?}");
    }

    #[test]
    fn single_differing_step_matches_its_weighted_term() {
        let s = small_schedule();
        let f = AffineChain::new(vec![0.3; 4], vec![0.5; 4], vec![0.1; 4]).unwrap();
        let mut g = f.clone();
        g.c[2] += 0.25;
        let r = kl_joint_decomposition_check(&s, &f, &g, 0.4, &QuadratureSpec::default()).unwrap();
        let want = s.weight_of(3).unwrap() * 0.25f64.powi(2);
        assert!((r.joint - want).abs() < 1e-10, "{} vs {want}", r.joint);
        assert!(r.abs_error < 1e-10);
    }
}
