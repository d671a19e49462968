//! Forward marginals, one-step transitions and the reverse posterior on a
//! single pixel, with a Monte Carlo check of marginal composition.

use rsd::diffusion::{marginal_params, posterior_params, sample_gaussian, transition_params};
use rsd::schedule::{ScheduleShape, ShiftingSchedule};
use rsd::Tensor;

fn main() -> rsd::Result<()> {
    let s = ShiftingSchedule::build(15, 1e-3, 0.999, 1.0, ScheduleShape::LogLinear)?;
    let x0 = Tensor::scalar(0.5);
    let y0 = Tensor::scalar(-0.25);
    let t = 8;

    let direct = marginal_params(&s, &x0, &y0, t)?;
    println!("q(x_{t} | x0, y0): mean {:.6}, var {:.6}", direct.mean.data()[0], direct.var);

    // Chain marginal(t - 1) then one transition by sampling.
    let mut rng = rsd::rng::stream(7);
    let prev = marginal_params(&s, &x0, &y0, t - 1)?;
    let n = 200_000;
    let (mut m, mut m2) = (0.0, 0.0);
    for _ in 0..n {
        let x_prev = sample_gaussian(&prev, &mut rng);
        let x_t = sample_gaussian(&transition_params(&s, &x_prev, &x0, &y0, t)?, &mut rng).data()[0];
        m += x_t;
        m2 += x_t * x_t;
    }
    let mean = m / n as f64;
    println!("composed by sampling:  mean {:.6}, var {:.6}", mean, m2 / n as f64 - mean * mean);

    let x_t = Tensor::scalar(0.1);
    let post = posterior_params(&s, &x_t, &x0, t)?;
    println!("q(x_{} | x_{t} = 0.1, x0): mean {:.6}, var {:.6}", t - 1, post.mean.data()[0], post.var);
    Ok(())
}
