//! Distill a one-step student with the residual-shifting objective and
//! compare it against the teacher it came from.
//!
//! cargo run --release --example distill_rsd

use rsd::config::RunConfig;
use rsd::data::make_paired;
use rsd::eval::{comparison_report, one_step_student};
use rsd::rsd::distill;
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
steps = 60
batch_size = 4
lr = 0.0002
[eval]
teacher_nfe = [1]
";

fn main() -> rsd::Result<()> {
    let cfg = RunConfig::parse(CONFIG)?;
    let s = cfg.schedule.build()?;
    let (train, test) = make_paired(&cfg.data)?;
    let codec = cfg.data.codec.build();
    let init = cfg.teacher.init_net(train.shape)?;
    let (teacher, _) = train_teacher(&s, &cfg.teacher, init, &encode_dataset(codec.as_ref(), &train))?;

    let d = &cfg.distill;
    println!("distilling: N = {} at t = {:?}, K = {}, lambda1 = {}, lambda2 = {}", d.n, d.timesteps(&s)?, d.k, d.lambda1, d.lambda2);
    let (student, log) = distill(&s, d, &teacher, codec.as_ref(), &train.pairs)?;
    for r in log.iter().step_by(15) {
        println!("step {:>3}  L_theta {:+.3e}  L_fake {:.3e}  L_perc {:.3}", r.step, r.l_theta, r.l_fake, r.l_perc);
    }

    let students = [one_step_student("rsd", &student, &s)];
    print!("{}", comparison_report(&s, codec.as_ref(), &teacher, &students, &test.pairs, &cfg.eval, "toy16")?.to_csv());
    Ok(())
}
