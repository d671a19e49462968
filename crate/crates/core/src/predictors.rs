//! Predictors `f(x_t, y0, t) -> x0_hat`, the noise-conditioned generator,
//! and parameterless oracle predictors backed by `oracles`.

use crate::error::{Error, Result};
use crate::nn::unet::{ForwardCache, InputGrads};
use crate::nn::{ArchSpec, UNet};
use crate::oracles::discrete::{conditional_expectation, nearest, AtomDist, DiscreteProblem};
use crate::oracles::gaussian::AnalyticGaussianProblem;
use crate::rng;
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

pub trait Predictor: Send + Sync {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor;

    /// Bottleneck features, for predictors that have them.
    fn encoder_features(&self, _x_t: &Tensor, _y0: &Tensor, _t: usize) -> Option<Tensor> {
        None
    }
}

/// A predictor that can pull an output gradient back to its `x_t` input.
pub trait DiffPredictor: Predictor {
    fn vjp_x_t(&self, x_t: &Tensor, y0: &Tensor, t: usize, d_out: &Tensor) -> Tensor;
}

impl Predictor for UNet {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor {
        self.predict_x0(x_t, y0, None, t)
    }

    fn encoder_features(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Option<Tensor> {
        Some(self.encode(x_t, y0, None, t).features)
    }
}

impl DiffPredictor for UNet {
    fn vjp_x_t(&self, x_t: &Tensor, y0: &Tensor, t: usize, d_out: &Tensor) -> Tensor {
        let (_, cache) = self.forward(x_t, y0, None, t);
        let mut scratch = vec![0.0; self.num_params()];
        self.backward(&cache, d_out, &mut scratch).x_t
    }
}

/// Randomly initialized toy encoder–decoder, seeded.
pub fn make_toy_predictor(spec: &ArchSpec, seed: u64) -> Result<UNet> {
    UNet::new(*spec, &mut rng::stream(seed))
}

/// `G(x_t, t, y0, eps) -> x0_hat`: a predictor network with an extra noise input.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    net: UNet,
}

impl Generator {
    pub fn from_net(net: UNet) -> Result<Self> {
        if !net.spec().noise_input {
            return Err(Error::Config("generator network needs a noise pathway".into()));
        }
        Ok(Generator { net })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn generate(&self, x_t: &Tensor, t: usize, y0: &Tensor, eps: &Tensor) -> Tensor {
        self.net.predict_x0(x_t, y0, Some(eps), t)
    }

    pub fn forward(&self, x_t: &Tensor, t: usize, y0: &Tensor, eps: &Tensor) -> (Tensor, ForwardCache) {
        self.net.forward(x_t, y0, Some(eps), t)
    }

    pub fn backward(&self, cache: &ForwardCache, d_out: &Tensor, grad: &mut [f64]) -> InputGrads {
        self.net.backward(cache, d_out, grad)
    }
}

/// Anything usable as `G(x_t, t, y0, eps)` inside the distillation samplers.
pub trait NoisyGenerator: Send + Sync {
    fn generate(&self, x_t: &Tensor, t: usize, y0: &Tensor, eps: &Tensor) -> Tensor;
}

impl NoisyGenerator for Generator {
    fn generate(&self, x_t: &Tensor, t: usize, y0: &Tensor, eps: &Tensor) -> Tensor {
        Generator::generate(self, x_t, t, y0, eps)
    }
}

/// A predictor used as a generator that ignores its noise input.
pub struct Promoted<P>(pub P);

impl<P: Predictor> NoisyGenerator for Promoted<P> {
    fn generate(&self, x_t: &Tensor, t: usize, y0: &Tensor, _eps: &Tensor) -> Tensor {
        self.0.predict(x_t, y0, t)
    }
}

/// Copy `f` and append a zero-initialized noise pathway, so the generator
/// equals `f` for every `eps` until the pathway is trained.
pub fn promote_to_generator(f: &UNet) -> Generator {
    Generator { net: f.with_noise_pathway() }
}

/// Elementwise scalar map `x -> (f(x, y0, t), df/dx)`.
pub struct ScalarMap {
    f: Box<dyn Fn(f64, f64, usize) -> (f64, f64) + Send + Sync>,
}

impl ScalarMap {
    pub fn new(f: impl Fn(f64, f64, usize) -> (f64, f64) + Send + Sync + 'static) -> Self {
        ScalarMap { f: Box::new(f) }
    }

    pub fn eval(&self, x: f64, y0: f64, t: usize) -> (f64, f64) {
        (self.f)(x, y0, t)
    }
}

impl Predictor for ScalarMap {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor {
        x_t.zip_map(y0, |x, y| (self.f)(x, y, t).0)
    }
}

impl DiffPredictor for ScalarMap {
    fn vjp_x_t(&self, x_t: &Tensor, y0: &Tensor, t: usize, d_out: &Tensor) -> Tensor {
        x_t.zip_map(y0, |x, y| (self.f)(x, y, t).1).zip_map(d_out, |j, g| j * g)
    }
}

/// Closed-form `E[x0 | x_t, y0]` for the analytic Gaussian problem, applied elementwise.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    problem: AnalyticGaussianProblem,
}

pub fn gaussian_oracle_predictor(problem: AnalyticGaussianProblem) -> GaussianOracle {
    GaussianOracle { problem }
}

impl Predictor for GaussianOracle {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor {
        x_t.zip_map(y0, |x, y| self.problem.posterior_mean(x, y, t))
    }
}

/// Exact enumeration of `E[x0_hat | x_t, y0]` over a finite support per `y0`,
/// applied elementwise. `y0` values are matched to the nearest table row.
#[derive(Debug, Clone)]
pub struct TabularOracle {
    schedule: ShiftingSchedule,
    y0s: Vec<f64>,
    dists: Vec<AtomDist>,
}

impl TabularOracle {
    pub fn new(schedule: ShiftingSchedule, y0s: Vec<f64>, dists: Vec<AtomDist>) -> Result<Self> {
        if y0s.is_empty() || y0s.len() != dists.len() {
            return Err(Error::Config("tabular oracle needs one distribution per y0".into()));
        }
        if dists.iter().any(|d| d.atoms.is_empty()) {
            return Err(Error::Config("tabular oracle has an empty support".into()));
        }
        Ok(TabularOracle { schedule, y0s, dists })
    }

    pub fn value(&self, x_t: f64, y0: f64, t: usize) -> f64 {
        let r = nearest(&self.y0s, y0);
        conditional_expectation(&self.schedule, &self.dists[r], x_t, y0, t)
    }
}

pub fn tabular_oracle_predictor(problem: &DiscreteProblem, dists: Vec<AtomDist>) -> Result<TabularOracle> {
    TabularOracle::new(problem.schedule.clone(), problem.y0s.clone(), dists)
}

impl Predictor for TabularOracle {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: usize) -> Tensor {
        x_t.zip_map(y0, |x, y| self.value(x, y, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleShape;

    fn spec16() -> ArchSpec {
        ArchSpec { channels: 1, size: 16, width: 4, bottleneck: 8, embed_dim: 8, noise_input: false }
    }

    #[test]
    fn toy_predictor_shape_and_determinism() {
        let a = make_toy_predictor(&spec16(), 3).unwrap();
        let b = make_toy_predictor(&spec16(), 3).unwrap();
        assert_eq!(a.params(), b.params());
        let x = Tensor::zeros([1, 16, 16]);
        assert_eq!(a.predict(&x, &x, 4).shape(), [1, 16, 16]);
        let bad = ArchSpec { width: 0, ..spec16() };
        assert!(make_toy_predictor(&bad, 0).is_err());
    }

    #[test]
    fn promotion_preserves_function() {
        let f = make_toy_predictor(&spec16(), 1).unwrap();
        let g = promote_to_generator(&f);
        let mut r = rng::stream(2);
        let x = Tensor::randn([1, 16, 16], &mut r);
        let y = Tensor::randn([1, 16, 16], &mut r);
        let z = Tensor::randn([1, 16, 16], &mut r);
        let base = f.predict(&x, &y, 7);
        assert!(g.generate(&x, 7, &y, &Tensor::zeros([1, 16, 16])).max_abs_diff(&base) <= 1e-12);
        assert!(g.generate(&x, 7, &y, &z).max_abs_diff(&base) <= 1e-12);
    }

    #[test]
    fn tabular_oracle_rejects_empty_support() {
        let s = ShiftingSchedule::build(3, 0.1, 0.9, 1.0, ScheduleShape::Linear).unwrap();
        let empty = AtomDist { atoms: vec![], probs: vec![] };
        assert!(TabularOracle::new(s, vec![0.0], vec![empty]).is_err());
    }

    #[test]
    fn gaussian_oracle_with_zero_noise_degradation() {
        let s = ShiftingSchedule::build(4, 0.05, 0.95, 1.0, ScheduleShape::LogLinear).unwrap();
        let p = AnalyticGaussianProblem::new(0.0, 1.0, 1.0, 0.0, 0.0, s).unwrap();
        let o = gaussian_oracle_predictor(p);
        let out = o.predict(&Tensor::scalar(0.9), &Tensor::scalar(-0.2), 2);
        assert_eq!(out.data()[0], -0.2);
    }
}
