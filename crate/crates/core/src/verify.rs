//! Verification suite: kernel identities, the tractable-objective identity
//! on finite problems, the joint KL decomposition, the VSD gradient relation
//! and finite-difference checks of every loss. Each check reports its worst
//! error against a fixed tolerance.

use rand::Rng;

use crate::diffusion::{jump_params, marginal_params, posterior_params, transition_params, PairedSample};
use crate::error::Result;
use crate::nn::{ArchSpec, DiscriminatorHead, PerceptualProxy, UNet};
use crate::oracles::discrete::{bruteforce_l_theta, conditional_expectation, AtomDist, DiscreteProblem};
use crate::oracles::kl::{kl_joint_decomposition_check, kl_step_coefficient, scalar_log_density, AffineChain};
use crate::oracles::quadrature::{refine, QuadratureSpec};
use crate::predictors::{promote_to_generator, tabular_oracle_predictor, Generator, Predictor, ScalarMap};
use crate::rng::{self, Stream};
use crate::rsd::{
    fake_loss, fake_loss_grad, gan_disc_loss_grad, gan_gen_loss_grad, gan_losses, generator_loss_rsd,
    generator_loss_rsd_full, perceptual_loss, perceptual_loss_grad, reparam_z_t, rsd_bracket,
};
use crate::schedule::{ScheduleShape, ShiftingSchedule};
use crate::teacher::teacher_loss;
use crate::tensor::Tensor;
use crate::vsd::{generator_loss_vsd, vsd_gradient, vsd_matched_w_double_prime};

pub const TOL_CHAPMAN_KOLMOGOROV: f64 = 1e-12;
pub const TOL_BAYES: f64 = 1e-8;
pub const TOL_WEIGHT_KL: f64 = 1e-10;
pub const TOL_GENERATOR_LOSS_VALUE: f64 = 1e-6;
pub const TOL_FAKE_TABLE: f64 = 1e-4;
pub const TOL_ARGMIN_TABLES: f64 = 1e-6;
pub const TOL_KL_DECOMPOSITION: f64 = 1e-6;
pub const TOL_STOPGRAD_EQUAL: f64 = 1e-6;
pub const TOL_FULL_GRAD_REL: f64 = 1e-5;
pub const TOL_FINITE_DIFF_REL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    /// Acceptance criterion the check belongs to.
    pub criterion: u8,
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(criterion: u8, name: &str, max_error: f64, tolerance: f64) -> Self {
        Check { criterion, name: name.into(), max_error, tolerance }
    }

    /// NaN errors fail.
    pub fn pass(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

pub const CSV_HEADER: &str = "check,max_error,tolerance,pass";

pub fn to_csv(checks: &[Check]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for c in checks {
        out.push_str(&format!("{},{:.3e},{:.0e},{}\n", c.name, c.max_error, c.tolerance, c.pass()));
    }
    out
}

/// Number of random cases per randomized check.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub kernel_cases: usize,
    pub schedules: usize,
    pub vsd_configs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, kernel_cases: 1000, schedules: 1000, vsd_configs: 100 }
    }
}

/// Every check, in criterion order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = kernel_identities(opts)?;
    out.extend(tractable_objective(opts.seed)?);
    out.extend(kl_decomposition(opts.seed)?);
    out.extend(vsd_relation(opts)?);
    out.extend(gradient_checks(opts.seed)?);
    Ok(out)
}

fn random_schedule(r: &mut Stream, max_steps: usize) -> ShiftingSchedule {
    let steps = r.random_range(2..=max_steps);
    let lo = 10f64.powf(r.random_range(-4.0..-1.3));
    let hi = r.random_range(0.95..=1.0);
    let kappa = r.random_range(0.1..2.0);
    let shape = if r.random_bool(0.5) { ScheduleShape::LogLinear } else { ScheduleShape::Linear };
    ShiftingSchedule::build(steps, lo, hi, kappa, shape).expect("random schedule is valid")
}

/// Marginal composition, the Bayes posterior identity and the weight/KL
/// coefficient agreement.
pub fn kernel_identities(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut r = rng::derive(opts.seed, &[0xC1]);
    let sc = Tensor::scalar;
    let (mut ck, mut bayes) = (0.0f64, 0.0f64);
    for _ in 0..opts.kernel_cases {
        let s = random_schedule(&mut r, 20);
        let (x0, y0) = (sc(r.random_range(-1.0..1.0)), sc(r.random_range(-1.0..1.0)));
        let t = r.random_range(2..=s.steps());
        // q(x_{t-1}) then one forward transition
        let prev = marginal_params(&s, &x0, &y0, t - 1)?;
        let step = transition_params(&s, &prev.mean, &x0, &y0, t)?;
        let want = marginal_params(&s, &x0, &y0, t)?;
        ck = ck.max(step.mean.max_abs_diff(&want.mean)).max((prev.var + step.var - want.var).abs());
        // q(x_t) then a posterior jump down to any earlier step
        let to = r.random_range(1..t);
        let jump = jump_params(&s, &want.mean, &x0, t, to)?;
        let ratio = s.eta(to) / s.eta(t);
        let down = marginal_params(&s, &x0, &y0, to)?;
        ck = ck.max(jump.mean.max_abs_diff(&down.mean)).max((ratio * ratio * want.var + jump.var - down.var).abs());

        // q(x_{t-1}|x_t,x0) q(x_t|x0) = q(x_t|x_{t-1}) q(x_{t-1}|x0)
        let x_prev = r.random_range(-2.0..2.0);
        let x_t = r.random_range(-2.0..2.0);
        let post = posterior_params(&s, &sc(x_t), &x0, t)?;
        let fwd = transition_params(&s, &sc(x_prev), &x0, &y0, t)?;
        let lhs = scalar_log_density(&post, &[x_prev])? + scalar_log_density(&want, &[x_t])?;
        let rhs = scalar_log_density(&fwd, &[x_t])? + scalar_log_density(&prev, &[x_prev])?;
        bayes = bayes.max((lhs - rhs).abs());
    }
    let mut kl = 0.0f64;
    for _ in 0..opts.schedules {
        let s = random_schedule(&mut r, 30);
        for t in 2..=s.steps() {
            let w = s.weight_of(t)?;
            kl = kl.max((w - kl_step_coefficient(&s, t)?).abs() / w.abs());
        }
    }
    Ok(vec![
        Check::new(1, "chapman_kolmogorov", ck, TOL_CHAPMAN_KOLMOGOROV),
        Check::new(1, "bayes_posterior", bayes, TOL_BAYES),
        Check::new(1, "weight_vs_kl_coefficient", kl, TOL_WEIGHT_KL),
    ])
}

/// A finite problem: two conditioning values, a data table for the teacher
/// and a different generator table.
fn discrete_setup() -> Result<(DiscreteProblem, Vec<AtomDist>, Vec<AtomDist>)> {
    let s = ShiftingSchedule::build(4, 0.05, 0.95, 1.0, ScheduleShape::LogLinear)?;
    let mut p = DiscreteProblem::new(s, vec![-0.3, 0.4], vec![0.4, 0.6])?;
    p.quadrature = QuadratureSpec { start_order: 16, max_order: 1024, tol: 1e-9 };
    let data = vec![
        AtomDist::new(vec![-0.9, -0.4, 0.1, 0.6], vec![0.1, 0.4, 0.3, 0.2])?,
        AtomDist::new(vec![-0.5, 0.2, 0.7], vec![0.3, 0.3, 0.4])?,
    ];
    let gen = vec![
        AtomDist::new(vec![-0.7, -0.2, 0.0, 0.3, 0.8], vec![0.2, 0.2, 0.2, 0.2, 0.2])?,
        AtomDist::new(vec![-0.6, -0.1, 0.5, 0.9, 1.0, 1.2], vec![0.1, 0.1, 0.3, 0.2, 0.2, 0.1])?,
    ];
    Ok((p, data, gen))
}

/// `sum_t E[generator_loss_rsd]` with the fake at the enumerated optimum,
/// integrated over the generator table and `x_t` by quadrature.
pub fn expected_generator_loss(
    p: &DiscreteProblem,
    gen: &[AtomDist],
    teacher: &dyn Predictor,
    fake: &dyn Predictor,
    weighted: bool,
) -> Result<f64> {
    let s = &p.schedule;
    let k2 = s.kappa() * s.kappa();
    let mut total = 0.0;
    for t in 1..=s.steps() {
        let eta = s.eta(t);
        for ((&y0, &py), dist) in p.y0s.iter().zip(&p.y_probs).zip(gen) {
            let mut err = None;
            let (v, _) = refine(&p.quadrature, |rule| {
                let mut acc = 0.0;
                for (&a, &pa) in dist.atoms.iter().zip(&dist.probs) {
                    for (x, wq) in rule.points(a + eta * (y0 - a), k2 * eta).into_iter().zip(rule.weights()) {
                        let l = generator_loss_rsd(s, teacher, fake, &Tensor::scalar(x), &Tensor::scalar(y0), t, &Tensor::scalar(a), weighted);
                        match l {
                            Ok(l) => acc += pa * wq * l.value,
                            Err(e) => err = Some(e),
                        }
                    }
                }
                acc
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            total += py * v;
        }
    }
    Ok(total)
}

/// Posterior weights of each atom given `x_t = x`, rescaled so the largest is 1.
fn cell_weights(s: &ShiftingSchedule, dist: &AtomDist, x: f64, y0: f64, t: usize) -> Vec<f64> {
    let eta = s.eta(t);
    let var = s.kappa() * s.kappa() * eta;
    let logw: Vec<f64> =
        dist.atoms.iter().zip(&dist.probs).map(|(&a, &pa)| pa.ln() - 0.5 * (x - a - eta * (y0 - a)).powi(2) / var).collect();
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logw.iter().map(|l| (l - m).exp()).collect()
}

/// A fake that is a free value per `(t, y0 row, grid cell)`, trained by
/// preconditioned gradient descent on the expected per-cell objective
/// `sum_a p(a | x) objective(value, a)`. Gradients come from central
/// differences of `objective`, exact for the quadratics used here.
fn train_table(
    p: &DiscreteProblem,
    gen: &[AtomDist],
    grid: &[f64],
    objective: impl Fn(&ShiftingSchedule, f64, f64, f64, usize, f64) -> f64,
) -> Vec<Vec<Vec<f64>>> {
    let s = &p.schedule;
    let h = 1e-3;
    (1..=s.steps())
        .map(|t| {
            p.y0s
                .iter()
                .zip(gen)
                .map(|(&y0, dist)| {
                    grid.iter()
                        .map(|&x| {
                            let cw = cell_weights(s, dist, x, y0, t);
                            let grad = |v: f64| -> f64 {
                                dist.atoms
                                    .iter()
                                    .zip(&cw)
                                    .map(|(&a, &c)| c * (objective(s, v + h, x, y0, t, a) - objective(s, v - h, x, y0, t, a)) / (2.0 * h))
                                    .sum()
                            };
                            // curvature of the cell objective, from two gradients
                            let curv = (grad(1.0) - grad(0.0)).abs();
                            if curv == 0.0 {
                                return f64::NAN;
                            }
                            let mut v = 0.0;
                            for _ in 0..50 {
                                v -= 0.7 * grad(v) / curv;
                            }
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// The tractable objective against brute force, and tabular-fake training
/// against enumeration.
pub fn tractable_objective(_seed: u64) -> Result<Vec<Check>> {
    let (p, data, gen) = discrete_setup()?;
    let teacher = tabular_oracle_predictor(&p, data)?;
    let fake = tabular_oracle_predictor(&p, gen.clone())?;
    let mut value_err = 0.0f64;
    for weighted in [false, true] {
        let brute = bruteforce_l_theta(&p, &gen, &teacher, weighted)?;
        let ours = expected_generator_loss(&p, &gen, &teacher, &fake, weighted)?;
        value_err = value_err.max((brute - ours).abs());
    }

    let s = &p.schedule;
    let grid: Vec<f64> = (0..=120).map(|i| -1.5 + 3.0 * i as f64 / 120.0).collect();
    let sc = Tensor::scalar;
    let by_fake = train_table(&p, &gen, &grid, |s, v, x, y0, t, a| {
        // fake_loss with the constant predictor `v` at this cell
        fake_loss(s, &Const(v), &sc(x), &sc(y0), t, &sc(a), false)
    });
    let by_bracket = train_table(&p, &gen, &grid, |_, v, x, y0, t, a| {
        rsd_bracket(&teacher.predict(&sc(x), &sc(y0), t), &sc(v), &sc(a))
    });
    let (mut table_err, mut argmin_err) = (0.0f64, 0.0f64);
    for t in 1..=s.steps() {
        for (r, (&y0, dist)) in p.y0s.iter().zip(&gen).enumerate() {
            for (g, &x) in grid.iter().enumerate() {
                let want = conditional_expectation(s, dist, x, y0, t);
                table_err = table_err.max((by_fake[t - 1][r][g] - want).abs());
                argmin_err = argmin_err.max((by_fake[t - 1][r][g] - by_bracket[t - 1][r][g]).abs());
            }
        }
    }
    Ok(vec![
        Check::new(2, "generator_loss_vs_bruteforce", value_err, TOL_GENERATOR_LOSS_VALUE),
        Check::new(2, "tabular_fake_vs_enumeration", table_err, TOL_FAKE_TABLE),
        Check::new(2, "fake_vs_bracket_argmin", argmin_err, TOL_ARGMIN_TABLES),
    ])
}

struct Const(f64);

impl Predictor for Const {
    fn predict(&self, x_t: &Tensor, _: &Tensor, _: usize) -> Tensor {
        Tensor::full(x_t.shape(), self.0)
    }
}

/// Joint-versus-per-step KL on random affine scalar chains.
pub fn kl_decomposition(seed: u64) -> Result<Vec<Check>> {
    let mut r = rng::derive(seed, &[0xC3]);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = random_schedule(&mut r, 6);
        let n = s.steps();
        let mut coeffs = |scale: f64| -> Vec<f64> { (0..n).map(|_| r.random_range(-scale..scale)).collect() };
        let teacher = AffineChain::new(coeffs(0.8), coeffs(0.8), coeffs(0.3))?;
        let model = AffineChain::new(coeffs(0.8), coeffs(0.8), coeffs(0.3))?;
        let y0 = r.random_range(-1.0..1.0);
        let rep = kl_joint_decomposition_check(&s, &teacher, &model, y0, &QuadratureSpec::default())?;
        worst = worst.max(rep.abs_error);
    }
    Ok(vec![Check::new(3, "kl_joint_decomposition", worst, TOL_KL_DECOMPOSITION)])
}

fn tiny_spec(noise: bool) -> ArchSpec {
    ArchSpec { channels: 1, size: 8, width: 3, bottleneck: 4, embed_dim: 4, noise_input: noise }
}

/// A generator whose noise pathway is already nonzero.
fn random_generator(r: &mut Stream) -> Generator {
    let mut g = promote_to_generator(&UNet::new(tiny_spec(false), r).expect("valid spec"));
    let range = g.net().noise_param_range().expect("generator has a noise pathway");
    for i in range {
        g.params_mut()[i] = 0.2 * r.random_range(-1.0..1.0);
    }
    g
}

/// Relative difference with a floor on the denominator.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn richardson(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Stop-gradient equality on random toy networks, and the full-gradient
/// decomposition on scalar differentiable toys.
pub fn vsd_relation(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut r = rng::derive(opts.seed, &[0xC4]);
    let s = ShiftingSchedule::build(15, 1e-3, 0.999, 1.0, ScheduleShape::LogLinear)?;
    let (mut param_err, mut two_alpha_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let teacher = UNet::new(tiny_spec(false), &mut r)?;
        let fake = UNet::new(tiny_spec(false), &mut r)?;
        let gen = random_generator(&mut r);
        let shape = [1, 8, 8];
        let (zy, z_big, eps, noise) =
            (Tensor::randn(shape, &mut r), Tensor::randn(shape, &mut r), Tensor::randn(shape, &mut r), Tensor::randn(shape, &mut r));
        let t = r.random_range(1..=s.steps());
        let weighted = r.random_bool(0.5);
        let (z0_hat, cache) = gen.forward(&z_big, s.steps(), &zy, &eps);
        let z_t = reparam_z_t(&s, &z0_hat, &zy, t, &noise);
        let l_rsd = generator_loss_rsd(&s, &teacher, &fake, &z_t, &zy, t, &z0_hat, weighted)?;
        let l_vsd = generator_loss_vsd(&s, &teacher, &fake, &z_t, &zy, t, &z0_hat, weighted)?;
        let mut g_rsd = vec![0.0; gen.num_params()];
        let mut g_vsd = vec![0.0; gen.num_params()];
        gen.backward(&cache, &l_rsd.d_z0_hat, &mut g_rsd);
        gen.backward(&cache, &l_vsd.d_z0_hat, &mut g_vsd);
        param_err = param_err.max(g_rsd.iter().zip(&g_vsd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        if s.loss_weight(t, weighted) > 0.0 {
            let f_star = teacher.predict(&z_t, &zy, t);
            let f_phi = fake.predict(&z_t, &zy, t);
            let v = vsd_gradient(vsd_matched_w_double_prime(&s, t, weighted), &f_star, &f_phi).scale(2.0 * s.alpha(t));
            two_alpha_err = two_alpha_err.max(v.max_abs_diff(&l_rsd.d_z0_hat));
        }
    }

    let mut full_err = 0.0f64;
    for _ in 0..opts.vsd_configs {
        let s = random_schedule(&mut r, 15);
        let mut map = || {
            let (a, b, c, d) =
                (r.random_range(0.2..1.5), r.random_range(-2.0..2.0), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5));
            move |x: f64, y: f64, t: usize| {
                let u = (b * x + c * y + 0.05 * t as f64).tanh();
                (a * u + d * x, a * b * (1.0 - u * u) + d)
            }
        };
        let (ft, ff) = (map(), map());
        let teacher = ScalarMap::new(ft);
        let fake = ScalarMap::new(ff);
        let t = r.random_range(1..=s.steps());
        let weighted = r.random_bool(0.5) && t > 1;
        let (y, n, theta) = (r.random_range(-1.0..1.0), r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
        let gen = |th: f64| th + 0.3 * th.sin();
        let dgen = |th: f64| 1.0 + 0.3 * th.cos();
        let zt_of = |z0: f64| reparam_z_t(&s, &Tensor::scalar(z0), &Tensor::scalar(y), t, &Tensor::scalar(n));
        let w = s.loss_weight(t, weighted);
        let loss = |z_at: f64, z_in: f64| {
            let z_t = zt_of(z_at);
            let yy = Tensor::scalar(y);
            -w * rsd_bracket(&teacher.predict(&z_t, &yy, t), &fake.predict(&z_t, &yy, t), &Tensor::scalar(z_in))
        };
        let z0 = gen(theta);
        let full = generator_loss_rsd_full(&s, &teacher, &fake, &zt_of(z0), &Tensor::scalar(y), t, &Tensor::scalar(z0), weighted)?;
        let total_fd = richardson(|th| loss(gen(th), gen(th)), theta, 1e-3);
        let path_fd = richardson(|th| loss(gen(th), z0), theta, 1e-3);
        let lib_total = full.d_z0_hat().data()[0] * dgen(theta);
        full_err = full_err.max(rel(lib_total, total_fd, 1e-9));
        let z_t = zt_of(z0);
        let yy = Tensor::scalar(y);
        let residual = if w > 0.0 {
            let v = vsd_gradient(
                vsd_matched_w_double_prime(&s, t, weighted),
                &teacher.predict(&z_t, &yy, t),
                &fake.predict(&z_t, &yy, t),
            );
            full.d_z0_hat().data()[0] - 2.0 * s.alpha(t) * v.data()[0]
        } else {
            full.d_z0_hat().data()[0]
        };
        full_err = full_err.max(rel(residual * dgen(theta), path_fd, 1e-9));
    }
    Ok(vec![
        Check::new(4, "stopgrad_rsd_vs_vsd_param_grad", param_err, TOL_STOPGRAD_EQUAL),
        Check::new(4, "stopgrad_rsd_vs_two_alpha_vsd", two_alpha_err, TOL_STOPGRAD_EQUAL),
        Check::new(4, "full_grad_residual_vs_model_path", full_err, TOL_FULL_GRAD_REL),
    ])
}

/// Worst relative error between `analytic` and central differences of
/// `value` over a strided subset of coordinates.
pub fn fd_check(params: &[f64], analytic: &[f64], stride: usize, mut value: impl FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in (0..params.len()).step_by(stride.max(1)) {
        p[i] = params[i] + h;
        let up = value(&p);
        p[i] = params[i] - h;
        let down = value(&p);
        p[i] = params[i];
        worst = worst.max(rel((up - down) / (2.0 * h), analytic[i], 1e-6));
    }
    worst
}

/// Finite-difference checks of every loss at f64.
pub fn gradient_checks(seed: u64) -> Result<Vec<Check>> {
    let mut r = rng::derive(seed, &[0xC5]);
    let s = ShiftingSchedule::build(15, 1e-3, 0.999, 1.0, ScheduleShape::LogLinear)?;
    let shape = [1, 8, 8];
    let randn = |r: &mut Stream| Tensor::randn(shape, r);
    let teacher = UNet::new(tiny_spec(false), &mut r)?;
    let fake = UNet::new(tiny_spec(false), &mut r)?;
    let gen = random_generator(&mut r);
    let disc = DiscriminatorHead::new(tiny_spec(false).bottleneck, 5, &mut r);
    let (z0, zy, z_big, eps, noise) = (randn(&mut r), randn(&mut r), randn(&mut r), randn(&mut r), randn(&mut r));
    let t = 9;
    let mut out = Vec::new();

    let batch = vec![PairedSample { x0: z0.clone(), y0: zy.clone() }, PairedSample { x0: randn(&mut r), y0: randn(&mut r) }];
    let (_, g) = teacher_loss(&s, &teacher, &batch, &mut rng::stream(seed), true)?;
    let e = fd_check(teacher.params(), &g, 7, |p| {
        let net = UNet::from_params(*teacher.spec(), p.to_vec()).expect("same layout");
        teacher_loss(&s, &net, &batch, &mut rng::stream(seed), true).expect("valid batch").0
    });
    out.push(Check::new(5, "grad_teacher_loss", e, TOL_FINITE_DIFF_REL));

    let (z0_hat, cache) = gen.forward(&z_big, s.steps(), &zy, &eps);
    let z_t = reparam_z_t(&s, &z0_hat, &zy, t, &noise);
    let mut g = vec![0.0; fake.num_params()];
    fake_loss_grad(&s, &fake, &z_t, &zy, t, &z0_hat, true, 1.0, &mut g);
    let e = fd_check(fake.params(), &g, 7, |p| {
        let net = UNet::from_params(*fake.spec(), p.to_vec()).expect("same layout");
        fake_loss(&s, &net, &z_t, &zy, t, &z0_hat, true)
    });
    out.push(Check::new(5, "grad_fake_loss", e, TOL_FINITE_DIFF_REL));

    // generator-side losses: gradient through G's parameters
    let gen_at = |p: &[f64]| Generator::from_net(UNet::from_params(*gen.net().spec(), p.to_vec()).expect("same layout")).expect("noise");
    let gen_check = |d: &Tensor, value: &dyn Fn(&Tensor) -> f64| {
        let mut g = vec![0.0; gen.num_params()];
        gen.backward(&cache, d, &mut g);
        fd_check(gen.params(), &g, 11, |p| value(&gen_at(p).generate(&z_big, s.steps(), &zy, &eps)))
    };
    let l = generator_loss_rsd(&s, &teacher, &fake, &z_t, &zy, t, &z0_hat, false)?;
    let e = gen_check(&l.d_z0_hat, &|h| generator_loss_rsd(&s, &teacher, &fake, &z_t, &zy, t, h, false).expect("shapes").value);
    out.push(Check::new(5, "grad_rsd_loss", e, TOL_FINITE_DIFF_REL));

    let l = generator_loss_rsd_full(&s, &teacher, &fake, &z_t, &zy, t, &z0_hat, false)?;
    let e = gen_check(&l.d_z0_hat(), &|h| {
        let zt = reparam_z_t(&s, h, &zy, t, &noise);
        generator_loss_rsd(&s, &teacher, &fake, &zt, &zy, t, h, false).expect("shapes").value
    });
    out.push(Check::new(5, "grad_rsd_loss_full", e, TOL_FINITE_DIFF_REL));

    let l = generator_loss_vsd(&s, &teacher, &fake, &z_t, &zy, t, &z0_hat, true)?;
    let e = gen_check(&l.d_z0_hat, &|h| generator_loss_vsd(&s, &teacher, &fake, &z_t, &zy, t, h, true).expect("shapes").value);
    out.push(Check::new(5, "grad_vsd_loss", e, TOL_FINITE_DIFF_REL));

    let l = gan_gen_loss_grad(&disc, &fake, &z0_hat, &zy);
    let e = gen_check(&l.d_z0_hat, &|h| gan_losses(&disc, &fake, &z0, h, &zy).1);
    out.push(Check::new(5, "grad_gan_generator", e, TOL_FINITE_DIFF_REL));

    let mut gd = vec![0.0; disc.num_params()];
    let mut gf = vec![0.0; fake.num_params()];
    gan_disc_loss_grad(&disc, &fake, &z0, &z0_hat, &zy, 1.0, &mut gd, Some((&mut gf, 1.0)));
    let e_d = fd_check(disc.params(), &gd, 1, |p| {
        let mut d = disc.clone();
        d.params_mut().copy_from_slice(p);
        gan_losses(&d, &fake, &z0, &z0_hat, &zy).0
    });
    let e_f = fd_check(fake.params(), &gf, 7, |p| {
        let net = UNet::from_params(*fake.spec(), p.to_vec()).expect("same layout");
        gan_losses(&disc, &net, &z0, &z0_hat, &zy).0
    });
    out.push(Check::new(5, "grad_gan_discriminator", e_d.max(e_f), TOL_FINITE_DIFF_REL));

    let proxy = PerceptualProxy::new(1);
    let x_hat = z0_hat.clone();
    let (_, g) = perceptual_loss_grad(&proxy, &z0, &x_hat);
    let e = fd_check(x_hat.data(), g.data(), 1, |p| perceptual_loss(&proxy, &z0, &Tensor::from_vec(shape, p.to_vec())));
    out.push(Check::new(5, "grad_perceptual", e, TOL_FINITE_DIFF_REL));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let c = [Check::new(1, "x", 1e-13, 1e-12), Check::new(1, "y", f64::NAN, 1.0)];
        let csv = to_csv(&c);
        assert!(csv.starts_with("check,max_error,tolerance,pass\nx,1.000e-13,1e-12,true\n"));
        assert!(csv.ends_with("y,NaN,1e0,false\n"));
    }

    #[test]
    fn richardson_is_accurate() {
        assert!((richardson(f64::sin, 0.4, 1e-3) - 0.4f64.cos()).abs() < 1e-12);
    }
}
