//! Closed-form and enumeration oracles: the Gaussian posterior mean, the
//! exact conditional expectation of a discrete prior, and the brute-force
//! distillation objective for a generator table.

use rsd::oracles::{
    analytic_posterior_mean, bruteforce_l_theta, conditional_expectation, AnalyticGaussianProblem, AtomDist,
    DiscreteProblem,
};
use rsd::predictors::tabular_oracle_predictor;
use rsd::schedule::{ScheduleShape, ShiftingSchedule};

fn main() -> rsd::Result<()> {
    let s = ShiftingSchedule::build(4, 0.05, 0.95, 1.0, ScheduleShape::LogLinear)?;

    let gauss = AnalyticGaussianProblem::new(0.2, 0.5, 0.8, 0.1, 0.05, s.clone())?;
    for t in 1..=s.steps() {
        println!("gaussian: E[x0 | x_t = 0.3, y0 = 0.1, t = {t}] = {:.6}", analytic_posterior_mean(&gauss, 0.3, 0.1, t));
    }

    let y0s = vec![-0.3, 0.4];
    let data = vec![AtomDist::new(vec![-0.8, -0.2, 0.5], vec![0.2, 0.5, 0.3])?, AtomDist::uniform(vec![0.0, 0.6])?];
    for (y0, d) in y0s.iter().zip(&data) {
        let e = conditional_expectation(&s, d, 0.0, *y0, 2);
        println!("discrete: E[x0 | x_2 = 0, y0 = {y0}] = {e:.6} (prior mean {:.3})", d.mean());
    }

    let problem = DiscreteProblem::new(s, y0s.clone(), vec![0.5, 0.5])?;
    let teacher = tabular_oracle_predictor(&problem, data.clone())?;
    let exact = bruteforce_l_theta(&problem, &data, &teacher, false)?;
    let shifted: Vec<AtomDist> = y0s.iter().map(|&y| AtomDist::point(y)).collect();
    let collapsed = bruteforce_l_theta(&problem, &shifted, &teacher, false)?;
    println!("L_theta with the data table as generator: {exact:.3e}");
    println!("L_theta with a generator that returns y0: {collapsed:.6}");
    Ok(())
}
