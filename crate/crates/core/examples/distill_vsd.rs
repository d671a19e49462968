//! The score-distillation baseline next to the residual-shifting objective,
//! both started from the same teacher with matched step counts.
//!
//! cargo run --release --example distill_vsd

use rsd::config::RunConfig;
use rsd::data::make_paired;
use rsd::eval::{comparison_report, one_step_student};
use rsd::rsd::{distill, DistillContext, DistillState};
use rsd::teacher::{encode_dataset, train_teacher};
use rsd::vsd::{distill_vsd_with, vsd_matched_w_double_prime};

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
[vsd]
steps = 40
batch_size = 4
lr = 0.0002
[eval]
teacher_nfe = []
";

fn main() -> rsd::Result<()> {
    let cfg = RunConfig::parse(CONFIG)?;
    let s = cfg.schedule.build()?;
    let (train, test) = make_paired(&cfg.data)?;
    let codec = cfg.data.codec.build();
    let init = cfg.teacher.init_net(train.shape)?;
    let (teacher, _) = train_teacher(&s, &cfg.teacher, init, &encode_dataset(codec.as_ref(), &train))?;

    println!("VSD weight matched to the RSD gradient, per t:");
    for t in 1..=s.steps() {
        print!(" {:.3e}", vsd_matched_w_double_prime(&s, t, cfg.vsd.weighted));
    }
    println!();

    let (rsd_student, _) = distill(&s, &cfg.distill, &teacher, codec.as_ref(), &train.pairs)?;

    let vcfg = cfg.vsd.as_distill(&s);
    let ctx = DistillContext::new(&s, &teacher, codec.as_ref(), &train.pairs, vcfg.timesteps(&s)?)?;
    let mut state = DistillState::from_teacher(&teacher, &vcfg);
    distill_vsd_with(&mut state, &cfg.vsd, &ctx, |_| Ok(()))?;

    let students = [one_step_student("rsd", &rsd_student, &s), one_step_student("vsd", &state.generator, &s)];
    print!("{}", comparison_report(&s, codec.as_ref(), &teacher, &students, &test.pairs, &cfg.eval, "toy16")?.to_csv());
    Ok(())
}
