//! A run directory end to end: data, teacher (interrupted and resumed),
//! both distillation methods, evaluation and plots.
//!
//! RSD_RUN_ROOT picks the parent directory (default ./runs).

use rsd::config::RunConfig;
use rsd::run::{self, DistillMethod, RunDir};

const CONFIG: &str = "\
[data]
size = 16
count = 128
test_count = 8
[teacher]
steps = 200
lr = 0.002
[distill]
steps = 30
batch_size = 4
lr = 0.0002
[vsd]
steps = 30
batch_size = 4
lr = 0.0002
[eval]
teacher_nfe = [1]
";

fn main() -> rsd::Result<()> {
    let dir = RunDir::create(&run::run_root(), "example")?;
    println!("run directory: {}", dir.path().display());
    let cfg = RunConfig::parse(CONFIG)?;
    dir.echo_config(&cfg)?;
    run::make_data(&dir, &cfg)?;

    let half = RunConfig::parse_with(CONFIG, &["teacher.steps=100".into()])?;
    run::train_teacher(&dir, &half, false, |k, l| println!("teacher step {k}: {l:.5}"))?;
    run::train_teacher(&dir, &cfg, true, |k, l| println!("teacher step {k}: {l:.5} (resumed)"))?;

    for m in [DistillMethod::Rsd, DistillMethod::Vsd] {
        run::distill(&dir, &cfg, m, None, false, |_| {})?;
    }
    print!("{}", run::evaluate(&dir, &cfg, None)?.to_csv());

    for name in ["teacher_loss", "distill_rsd", "distill_vsd"] {
        let csv = std::fs::read_to_string(dir.log(name)).map_err(|e| rsd::Error::Config(e.to_string()))?;
        run::write_text(&dir.report(&format!("{name}.svg")), &rsd::plot::csv_to_svg(&csv, name)?)?;
    }
    println!("plots in {}", dir.path().join("reports").display());
    Ok(())
}
