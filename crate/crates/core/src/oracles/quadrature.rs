//! Gauss–Hermite expectations under a Gaussian with automatic order refinement.

use gauss_quad::GaussHermite;

use crate::error::{Error, Result};

/// Nodes and weights for `E[g(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussianRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianRule {
    pub fn new(order: usize) -> Self {
        let gh = GaussHermite::new(order.max(2)).expect("order >= 2");
        let norm = std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        let (nodes, weights) = gh.as_node_weight_pairs().iter().map(|&(x, w)| (sqrt2 * x, w / norm)).unzip();
        GaussianRule { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Quadrature points for `N(mean, var)`, paired with the standard weights.
    pub fn points(&self, mean: f64, var: f64) -> Vec<f64> {
        let sd = var.max(0.0).sqrt();
        self.nodes.iter().map(|z| mean + sd * z).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect(&self, mean: f64, var: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.points(mean, var).into_iter().zip(&self.weights).map(|(x, w)| w * g(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub start_order: usize,
    pub max_order: usize,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { start_order: 16, max_order: 256, tol: 1e-8 }
    }
}

/// Evaluate `f` at doubling orders until two successive values differ by at
/// most `spec.tol`. Returns the last value and the order that produced it.
pub fn refine(spec: &QuadratureSpec, mut f: impl FnMut(&GaussianRule) -> f64) -> Result<(f64, usize)> {
    let mut order = spec.start_order.max(2);
    let mut prev = f(&GaussianRule::new(order));
    let mut change = f64::INFINITY;
    while order * 2 <= spec.max_order {
        order *= 2;
        let cur = f(&GaussianRule::new(order));
        change = (cur - prev).abs();
        if change <= spec.tol {
            return Ok((cur, order));
        }
        prev = cur;
    }
    Err(Error::Precision { tol: spec.tol, change, order })
}
