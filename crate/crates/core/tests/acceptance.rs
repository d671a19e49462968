//! Acceptance criteria 1-9. Each criterion prints one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) with the measured values and tolerances.
//!
//! Desk-scale training settings live in `DESK`; everything not listed there
//! is the shipped default.

use std::io::Write;
use std::time::{Duration, Instant};

use rsd::config::RunConfig;
use rsd::data::make_paired;
use rsd::eval::{
    ablation_grid, ablation_report, comparison_report, evaluate_method, one_step_student, AblationKind, EvalReport,
    EvalRow,
};
use rsd::rsd::{distill, DistillConfig};
use rsd::run::{self, DistillMethod, RunDir};
use rsd::teacher::{encode_dataset, train_teacher};
use rsd::verify::{self, Check, VerifyOptions};

/// Strict-inequality margin for the ablation directions, and re-seed budget.
const ABLATION_MARGIN_DB: f64 = 0.1;
const MAX_SEEDS: u64 = 3;
/// Student PSNR may trail the 15-step teacher by at most this much.
const STUDENT_PSNR_SLACK_DB: f64 = 0.5;
const CPU_BUDGET: Duration = Duration::from_secs(2 * 3600);

const DESK: &str = "\
[teacher]
lr = 0.002
[distill]
steps = 300
batch_size = 4
lr = 0.0002
[eval]
teacher_nfe = [1]
";

/// Reduced pipeline for the replay check.
const REPLAY: &str = "\
[data]
count = 256
test_count = 16
[teacher]
steps = 300
lr = 0.002
[distill]
steps = 40
batch_size = 4
lr = 0.0002
[eval]
teacher_nfe = [1]
";

fn report(criterion: u8, pass: bool, detail: &str) {
    let line = format!("criterion {criterion}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    // written straight to the handle so the line survives test output capture
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn check_group(criterion: u8, checks: &[Check], elapsed: Duration, limit: Duration) -> bool {
    let mine: Vec<&Check> = checks.iter().filter(|c| c.criterion == criterion).collect();
    let ok = !mine.is_empty() && mine.iter().all(|c| c.pass()) && elapsed < limit;
    let detail: Vec<String> =
        mine.iter().map(|c| format!("{} {:.2e}<={:.0e}", c.name, c.max_error, c.tolerance)).collect();
    report(criterion, ok, &format!("{}; {:.1}s < {}s", detail.join(", "), elapsed.as_secs_f64(), limit.as_secs()));
    ok
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

#[test]
fn criterion_1_kernel_identities() {
    let (checks, dt) = timed(|| verify::kernel_identities(&VerifyOptions::default()).unwrap());
    assert!(check_group(1, &checks, dt, Duration::from_secs(60)));
}

#[test]
fn criterion_2_tractable_objective() {
    let (checks, dt) = timed(|| verify::tractable_objective(0).unwrap());
    assert!(check_group(2, &checks, dt, Duration::from_secs(300)));
}

#[test]
fn criterion_3_kl_decomposition() {
    let (checks, dt) = timed(|| verify::kl_decomposition(0).unwrap());
    assert!(check_group(3, &checks, dt, Duration::from_secs(60)));
}

#[test]
fn criterion_4_vsd_gradient_relation() {
    let (checks, dt) = timed(|| verify::vsd_relation(&VerifyOptions::default()).unwrap());
    assert!(check_group(4, &checks, dt, Duration::from_secs(300)));
}

#[test]
fn criterion_5_gradient_checks() {
    let (checks, dt) = timed(|| verify::gradient_checks(0).unwrap());
    assert!(check_group(5, &checks, dt, Duration::from_secs(300)));
}

fn row<'a>(r: &'a EvalReport, method: &str) -> &'a EvalRow {
    r.row(method).unwrap_or_else(|| panic!("no {method} row in\n{}", r.to_csv()))
}

/// Train and evaluate two grid entries of `kind` with distillation seed
/// `seed`, for a re-seeded comparison.
fn rerun_pair(
    cfg: &RunConfig,
    kind: AblationKind,
    labels: [&str; 2],
    seed: u64,
    ctx: &Desk,
) -> [EvalRow; 2] {
    let base = DistillConfig { seed, ..cfg.distill.clone() };
    let grid = ablation_grid(kind, &ctx.s, &base);
    labels.map(|label| {
        let v = grid.iter().find(|v| v.label == label).unwrap();
        let (gen, _) = distill(&ctx.s, &v.cfg, &ctx.teacher, ctx.codec.as_ref(), &ctx.train).unwrap();
        evaluate_method(&one_step_student(label, &gen, &ctx.s), &ctx.s, ctx.codec.as_ref(), &ctx.test, &cfg.eval)
            .unwrap()
    })
}

struct Desk {
    s: rsd::schedule::ShiftingSchedule,
    teacher: rsd::nn::UNet,
    codec: Box<dyn rsd::data::codec::LatentCodec>,
    train: Vec<rsd::diffusion::PairedSample>,
    test: Vec<rsd::diffusion::PairedSample>,
}

fn curve(r: &EvalReport) -> String {
    r.rows.iter().map(|x| format!("{} {:.3}dB/{:.4}", x.method, x.psnr, x.perc_proxy)).collect::<Vec<_>>().join(", ")
}

/// Criteria 6-8 share one desk-scale teacher.
#[test]
fn criteria_6_7_8_desk_scale_distillation() {
    let cfg = RunConfig::parse(DESK).unwrap();
    let s = cfg.schedule.build().unwrap();
    let (train, test) = make_paired(&cfg.data).unwrap();
    let codec = cfg.data.codec.build();
    let t0 = Instant::now();
    let init = cfg.teacher.init_net(train.shape).unwrap();
    let (teacher, _) = train_teacher(&s, &cfg.teacher, init, &encode_dataset(codec.as_ref(), &train)).unwrap();
    let teacher_time = t0.elapsed();
    let ctx = Desk { s, teacher, codec, train: train.pairs, test: test.pairs };
    let base = comparison_report(&ctx.s, ctx.codec.as_ref(), &ctx.teacher, &[], &ctx.test, &cfg.eval, "toy").unwrap();
    let t15 = row(&base, "teacher@15").clone();
    let _ = std::io::stderr().write_all(format!("teacher: {}\n", curve(&base)).as_bytes());

    let (multi, multi_time) = timed(|| {
        ablation_report(AblationKind::Multistep, &ctx.s, &cfg.distill, &ctx.teacher, ctx.codec.as_ref(), &ctx.train, &ctx.test, &cfg.eval, |_| {})
            .unwrap()
    });
    let _ = std::io::stderr().write_all(format!("multistep: {}\n", curve(&multi)).as_bytes());

    // criterion 6: the N=4 row is the default RSD configuration
    let student = row(&multi, "N=4");
    let one_run = teacher_time + multi_time / multi.rows.len() as u32;
    let ok6 = student.psnr >= t15.psnr - STUDENT_PSNR_SLACK_DB
        && student.perc_proxy <= t15.perc_proxy
        && student.nfe == 1
        && one_run <= CPU_BUDGET;
    report(
        6,
        ok6,
        &format!(
            "student PSNR {:.3} >= teacher@15 {:.3} - {STUDENT_PSNR_SLACK_DB}; PercProxy {:.4} <= {:.4}; {:.0}s <= {}s",
            student.psnr,
            t15.psnr,
            student.perc_proxy,
            t15.perc_proxy,
            one_run.as_secs_f64(),
            CPU_BUDGET.as_secs()
        ),
    );

    // criterion 7: N=15 beats N=1 by the margin, re-seeding up to MAX_SEEDS
    let mut gaps = vec![row(&multi, "N=15").psnr - row(&multi, "N=1").psnr];
    for seed in 1..MAX_SEEDS {
        if gaps.last().is_some_and(|&g| g >= ABLATION_MARGIN_DB) {
            break;
        }
        let [n1, n15] = rerun_pair(&cfg, AblationKind::Multistep, ["N=1", "N=15"], seed, &ctx);
        gaps.push(n15.psnr - n1.psnr);
    }
    let ok7 = gaps.last().is_some_and(|&g| g >= ABLATION_MARGIN_DB);
    report(7, ok7, &format!("PSNR(N=15) - PSNR(N=1) per seed {gaps:.3?} >= {ABLATION_MARGIN_DB}"));

    // criterion 8: the perceptual term improves PSNR and PercProxy over distill-only
    let losses = ablation_report(AblationKind::Losses, &ctx.s, &cfg.distill, &ctx.teacher, ctx.codec.as_ref(), &ctx.train, &ctx.test, &cfg.eval, |_| {})
        .unwrap();
    let _ = std::io::stderr().write_all(format!("losses: {}\n", curve(&losses)).as_bytes());
    let delta = |a: &EvalRow, b: &EvalRow| (b.psnr - a.psnr, a.perc_proxy - b.perc_proxy);
    let mut deltas = vec![delta(row(&losses, "distill-only"), row(&losses, "+perc"))];
    let good = |d: &(f64, f64)| d.0 >= ABLATION_MARGIN_DB && d.1 > 0.0;
    for seed in 1..MAX_SEEDS {
        if deltas.last().is_some_and(good) {
            break;
        }
        let [d, p] = rerun_pair(&cfg, AblationKind::Losses, ["distill-only", "+perc"], seed, &ctx);
        deltas.push(delta(&d, &p));
    }
    let ok8 = deltas.last().is_some_and(good);
    report(8, ok8, &format!("(PSNR gain, PercProxy drop) of +perc over distill-only per seed {deltas:.4?}; need PSNR gain >= {ABLATION_MARGIN_DB} and drop > 0"));

    assert!(ok6 && ok7 && ok8, "criteria 6/7/8: {ok6} {ok7} {ok8}");
}

fn replay(root: &std::path::Path, name: &str) -> (String, Vec<Vec<u8>>) {
    let cfg = RunConfig::parse(REPLAY).unwrap();
    let dir = RunDir::create(root, name).unwrap();
    dir.echo_config(&cfg).unwrap();
    run::make_data(&dir, &cfg).unwrap();
    run::train_teacher(&dir, &cfg, false, |_, _| {}).unwrap();
    run::distill(&dir, &cfg, DistillMethod::Rsd, None, false, |_| {}).unwrap();
    let metrics = run::evaluate(&dir, &cfg, None).unwrap().metrics_csv();
    let files = [
        dir.config_path(),
        dir.data_file("train"),
        dir.data_file("test"),
        dir.log("teacher_loss"),
        dir.log("distill_rsd"),
        dir.checkpoint("teacher"),
        dir.checkpoint("generator_rsd"),
        dir.checkpoint("generator_rsd_ema"),
    ];
    (metrics, files.iter().map(|p| std::fs::read(p).unwrap()).collect())
}

#[test]
fn criterion_9_determinism_replay() {
    let root = tempfile::tempdir().unwrap();
    let (m1, f1) = replay(root.path(), "first");
    let (m2, f2) = replay(root.path(), "second");
    let same_files = f1 == f2;
    let ok = m1 == m2 && same_files;
    report(
        9,
        ok,
        &format!("metrics CSV identical: {}; config, data, logs and checkpoints identical: {same_files}", m1 == m2),
    );
    assert!(ok);
}
