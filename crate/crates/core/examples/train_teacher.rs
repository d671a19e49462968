//! Train a small teacher on toy pairs, then sample with 15 and with fewer
//! strided steps.
//!
//! cargo run --release --example train_teacher -- [steps]

use rsd::config::RunConfig;
use rsd::data::make_paired;
use rsd::eval::{comparison_report, EvalConfig};
use rsd::teacher::{encode_dataset, train_teacher, window_means};

fn main() -> rsd::Result<()> {
    let steps = std::env::args().nth(1).unwrap_or_else(|| "400".into());
    let cfg = RunConfig::parse_with(
        "[data]\nsize = 16\ncount = 256\ntest_count = 16\n[teacher]\nlr = 0.002\n",
        &[format!("teacher.steps={steps}")],
    )?;
    let s = cfg.schedule.build()?;
    let (train, test) = make_paired(&cfg.data)?;
    let codec = cfg.data.codec.build();

    let init = cfg.teacher.init_net(train.shape)?;
    println!("teacher: {} parameters, {} steps", init.num_params(), cfg.teacher.steps);
    let (teacher, log) = train_teacher(&s, &cfg.teacher, init, &encode_dataset(codec.as_ref(), &train))?;
    let (first, last) = window_means(&log);
    println!("mean loss over the first / last window: {first:.5} / {last:.5}");

    let eval = EvalConfig { teacher_nfe: vec![1, 3, 5], ..EvalConfig::default() };
    let report = comparison_report(&s, codec.as_ref(), &teacher, &[], &test.pairs, &eval, "toy16")?;
    print!("{}", report.to_csv());
    Ok(())
}
