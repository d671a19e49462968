//! Build the shifting schedule and print eta, alpha and the per-step weight.
//!
//! cargo run --example schedule -- [T] [kappa]

use rsd::schedule::{ScheduleBounds, ScheduleShape, ShiftingSchedule};

fn main() -> rsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(15);
    let kappa: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1.0);

    for shape in [ScheduleShape::LogLinear, ScheduleShape::Linear] {
        let s = ShiftingSchedule::build(steps, 1e-3, 0.999, kappa, shape)?;
        println!("# {shape:?}, kappa = {kappa}");
        print!("{}", s.to_csv());
        let problems = s.validate(&ScheduleBounds::default());
        if !problems.is_empty() {
            println!("# bound violations: {}", problems.join("; "));
        }
        println!("# 4 evenly placed training steps: {:?}", s.evenly_placed(4)?);
        println!();
    }
    Ok(())
}
