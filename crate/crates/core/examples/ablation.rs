//! Multistep and supervised-loss ablation grids at a small scale.
//!
//! cargo run --release --example ablation -- [multistep|losses]

use rsd::config::RunConfig;
use rsd::data::make_paired;
use rsd::eval::{ablation_report, AblationKind};
use rsd::teacher::{encode_dataset, train_teacher};

const CONFIG: &str = "\
[data]
size = 16
count = 256
test_count = 16
[teacher]
steps = 400
lr = 0.002
[distill]
steps = 40
batch_size = 4
lr = 0.0002
";

fn main() -> rsd::Result<()> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("losses") => AblationKind::Losses,
        _ => AblationKind::Multistep,
    };
    let cfg = RunConfig::parse(CONFIG)?;
    let s = cfg.schedule.build()?;
    let (train, test) = make_paired(&cfg.data)?;
    let codec = cfg.data.codec.build();
    let init = cfg.teacher.init_net(train.shape)?;
    let (teacher, _) = train_teacher(&s, &cfg.teacher, init, &encode_dataset(codec.as_ref(), &train))?;

    let report = ablation_report(kind, &s, &cfg.distill, &teacher, codec.as_ref(), &train.pairs, &test.pairs, &cfg.eval, |r| {
        eprintln!("done: {} ({:.3} dB)", r.method, r.psnr)
    })?;
    print!("{}", report.to_csv());
    Ok(())
}
