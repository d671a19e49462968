//! Independent ground truth: analytic Gaussian problems, finite-support
//! problems with enumerated conditional expectations, Gauss–Hermite
//! quadrature and Gaussian KL formulas.

pub mod discrete;
pub mod gaussian;
pub mod kl;
pub mod quadrature;

pub use discrete::{bruteforce_l_theta, conditional_expectation, AtomDist, DiscreteProblem};
pub use gaussian::{analytic_posterior_mean, AnalyticGaussianProblem};
pub use kl::{kl_joint_decomposition_check, kl_step_coefficient, scalar_log_density, AffineChain};
pub use quadrature::{GaussianRule, QuadratureSpec};
