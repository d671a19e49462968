//! Finite-support problems where every conditional expectation is an exact
//! enumeration and every `x_t` integral is a Gauss–Hermite sum.

use crate::error::{Error, Result};
use crate::oracles::quadrature::{refine, QuadratureSpec};
use crate::predictors::Predictor;
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

/// A finite distribution over scalar atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDist {
    pub atoms: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AtomDist {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("atom distribution has empty support".into()));
        }
        if atoms.len() != probs.len() {
            return Err(Error::Config("atoms and probabilities differ in length".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probs.iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!("probabilities must be non-negative and sum to 1, got {total}")));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("atoms must be finite".into()));
        }
        Ok(AtomDist { atoms, probs })
    }

    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point(a: f64) -> Self {
        AtomDist { atoms: vec![a], probs: vec![1.0] }
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.probs).map(|(a, p)| a * p).sum()
    }
}

/// Conditioning values `y0` with their probabilities, plus the quadrature
/// settings used for every `x_t` integral.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub schedule: ShiftingSchedule,
    pub y0s: Vec<f64>,
    pub y_probs: Vec<f64>,
    pub quadrature: QuadratureSpec,
}

impl DiscreteProblem {
    pub fn new(schedule: ShiftingSchedule, y0s: Vec<f64>, y_probs: Vec<f64>) -> Result<Self> {
        if y0s.is_empty() || y0s.len() != y_probs.len() {
            return Err(Error::Config("need one probability per y0 and at least one y0".into()));
        }
        if (y_probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("y0 probabilities must sum to 1".into()));
        }
        Ok(DiscreteProblem { schedule, y0s, y_probs, quadrature: QuadratureSpec::default() })
    }

    pub fn row_of(&self, y0: f64) -> usize {
        nearest(&self.y0s, y0)
    }
}

pub(crate) fn nearest(values: &[f64], v: f64) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `E[x0_hat | x_t, y0]` when `x0_hat ~ dist` and `x_t ~ q(x_t | x0_hat, y0)`.
pub fn conditional_expectation(s: &ShiftingSchedule, dist: &AtomDist, x_t: f64, y0: f64, t: usize) -> f64 {
    let eta = s.eta(t);
    let var = s.kappa() * s.kappa() * eta;
    if dist.atoms.len() == 1 {
        return dist.atoms[0];
    }
    // log-weights; with var = 0 the nearest atom mean wins outright
    let logw: Vec<f64> = dist
        .atoms
        .iter()
        .zip(&dist.probs)
        .map(|(&a, &p)| {
            let mu = a + eta * (y0 - a);
            if p == 0.0 {
                f64::NEG_INFINITY
            } else if var == 0.0 {
                if (x_t - mu).abs() < 1e-12 { p.ln() } else { f64::NEG_INFINITY }
            } else {
                p.ln() - 0.5 * (x_t - mu).powi(2) / var
            }
        })
        .collect();
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = logw.iter().zip(&dist.atoms).fold((0.0, 0.0), |(n, d), (&lw, &a)| {
        let w = (lw - m).exp();
        (n + w * a, d + w)
    });
    num / den
}

/// Brute-force `sum_t w_t E || f_G(x_t, y0, t) - f*(x_t, y0, t) ||^2` where
/// `f_G` is the exact conditional expectation under the generator table.
/// Steps with zero loss weight (t = 1 in weighted mode) are skipped.
pub fn bruteforce_l_theta(
    p: &DiscreteProblem,
    gen: &[AtomDist],
    teacher: &dyn Predictor,
    weighted: bool,
) -> Result<f64> {
    bruteforce_l_theta_at(p, gen, teacher, weighted, &p.quadrature).map(|(v, _)| v)
}

/// As [`bruteforce_l_theta`] but with an explicit quadrature spec; also
/// returns the highest Gauss–Hermite order used.
pub fn bruteforce_l_theta_at(
    p: &DiscreteProblem,
    gen: &[AtomDist],
    teacher: &dyn Predictor,
    weighted: bool,
    spec: &QuadratureSpec,
) -> Result<(f64, usize)> {
    if gen.len() != p.y0s.len() {
        return Err(Error::Config("generator table needs one distribution per y0".into()));
    }
    let s = &p.schedule;
    let mut total = 0.0;
    let mut max_order = 0;
    for t in 1..=s.steps() {
        let w = s.loss_weight(t, weighted);
        if w == 0.0 {
            continue;
        }
        let eta = s.eta(t);
        let var = s.kappa() * s.kappa() * eta;
        for (r, (&y0, &py)) in p.y0s.iter().zip(&p.y_probs).enumerate() {
            let dist = &gen[r];
            let (val, order) = refine(spec, |rule| {
                let mut acc = 0.0;
                for (&a, &pa) in dist.atoms.iter().zip(&dist.probs) {
                    let pts = rule.points(a + eta * (y0 - a), var);
                    let n = pts.len();
                    let f_star = teacher.predict(&Tensor::from_vec([1, 1, n], pts.clone()), &Tensor::full([1, 1, n], y0), t);
                    for ((x, wq), fs) in pts.iter().zip(rule.weights()).zip(f_star.data()) {
                        let fg = conditional_expectation(s, dist, *x, y0, t);
                        acc += pa * wq * (fg - fs).powi(2);
                    }
                }
                acc
            })?;
            max_order = max_order.max(order);
            total += w * py * val;
        }
    }
    Ok((total, max_order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleShape;

    struct Constant(f64);
    impl Predictor for Constant {
        fn predict(&self, x_t: &Tensor, _: &Tensor, _: usize) -> Tensor {
            Tensor::full(x_t.shape(), self.0)
        }
    }

    fn sched() -> ShiftingSchedule {
        ShiftingSchedule::build(4, 0.05, 0.95, 0.5, ScheduleShape::LogLinear).unwrap()
    }

    #[test]
    fn single_atom_is_returned_everywhere() {
        let d = AtomDist::point(0.3);
        for x in [-2.0, 0.0, 5.0] {
            assert_eq!(conditional_expectation(&sched(), &d, x, 0.1, 2), 0.3);
        }
    }

    #[test]
    fn symmetric_atoms_give_zero_at_midpoint() {
        let d = AtomDist::uniform(vec![-0.5, 0.5]).unwrap();
        let s = sched();
        // marginal means are (1-eta)(+-a) + eta*y0 with y0 = 0, midpoint is 0
        assert!(conditional_expectation(&s, &d, 0.0, 0.0, 3).abs() < 1e-15);
    }

    #[test]
    fn small_kappa_snaps_to_the_nearest_atom() {
        let s = sched().with_kappa(1e-3).unwrap();
        let d = AtomDist::uniform(vec![-0.5, 0.5]).unwrap();
        let eta = s.eta(2);
        let x = 0.5 + eta * (0.2 - 0.5);
        assert!((conditional_expectation(&s, &d, x, 0.2, 2) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_empty_support() {
        assert!(AtomDist::new(vec![], vec![]).is_err());
        assert!(AtomDist::new(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn single_atom_against_constant_teacher() {
        // sum_t w_t (a - c)^2
        let s = sched();
        let p = DiscreteProblem::new(s.clone(), vec![0.2], vec![1.0]).unwrap();
        let gen = vec![AtomDist::point(0.7)];
        let got = bruteforce_l_theta(&p, &gen, &Constant(0.1), true).unwrap();
        let want: f64 = (2..=4).map(|t| s.weight_of(t).unwrap() * 0.36).sum();
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
        let got_u = bruteforce_l_theta(&p, &gen, &Constant(0.1), false).unwrap();
        assert!((got_u - 4.0 * 0.36).abs() < 1e-12);
    }
}
