mod common;

use std::fs;

use common::tiny;
use rsd::run::{self, DistillMethod, RunDir};

fn bytes(p: &std::path::Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn steps_in(csv: &str) -> Vec<usize> {
    csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn fresh_run_writes_all_artifact_kinds() {
    let root = tempfile::tempdir().unwrap();
    let run = RunDir::create(root.path(), "fresh").unwrap();
    let cfg = tiny(&[]);
    run.echo_config(&cfg).unwrap();
    run::train_teacher(&run, &cfg, false, |_, _| {}).unwrap();
    run::distill(&run, &cfg, DistillMethod::Rsd, None, false, |_| {}).unwrap();
    let report = run::evaluate(&run, &cfg, None).unwrap();
    assert!(report.row("rsd").is_some_and(|r| r.nfe == 1));
    assert_eq!(run.saved_config().unwrap(), Some(cfg));
    for p in [
        run.data_file("train"),
        run.checkpoint("teacher"),
        run.checkpoint("generator_rsd"),
        run.checkpoint("generator_rsd_ema"),
        run.log("teacher_loss"),
        run.log("distill_rsd"),
        run.report("eval.csv"),
    ] {
        assert!(p.is_file(), "{} missing", p.display());
    }
}

#[test]
fn resume_doubles_logged_steps_without_gaps() {
    let root = tempfile::tempdir().unwrap();
    let half = RunDir::create(root.path(), "resumed").unwrap();
    run::train_teacher(&half, &tiny(&[]), false, |_, _| {}).unwrap();
    run::train_teacher(&half, &tiny(&["teacher.steps=240"]), true, |_, _| {}).unwrap();
    let log = fs::read_to_string(half.log("teacher_loss")).unwrap();
    assert_eq!(steps_in(&log), (1..=240).collect::<Vec<_>>());

    let whole = RunDir::create(root.path(), "whole").unwrap();
    run::train_teacher(&whole, &tiny(&["teacher.steps=240"]), false, |_, _| {}).unwrap();
    assert_eq!(log, fs::read_to_string(whole.log("teacher_loss")).unwrap());
    assert_eq!(bytes(&half.checkpoint("teacher")), bytes(&whole.checkpoint("teacher")));

    for run in [&half, &whole] {
        let (a, b) = if run == &half { (12, 24) } else { (24, 24) };
        run::distill(run, &tiny(&[&format!("distill.steps={a}")]), DistillMethod::Rsd, None, false, |_| {}).unwrap();
        if a != b {
            run::distill(run, &tiny(&[&format!("distill.steps={b}")]), DistillMethod::Rsd, None, true, |_| {}).unwrap();
        }
    }
    let dlog = fs::read_to_string(half.log("distill_rsd")).unwrap();
    assert_eq!(steps_in(&dlog), (1..=24).collect::<Vec<_>>());
    assert_eq!(dlog, fs::read_to_string(whole.log("distill_rsd")).unwrap());
    for name in ["generator_rsd", "generator_rsd_ema", "distill_rsd_state"] {
        assert_eq!(bytes(&half.checkpoint(name)), bytes(&whole.checkpoint(name)), "{name}");
    }
}

#[test]
fn missing_teacher_is_a_config_error_naming_the_fix() {
    let root = tempfile::tempdir().unwrap();
    let run = RunDir::create(root.path(), "empty").unwrap();
    let e = run::distill(&run, &tiny(&[]), DistillMethod::Vsd, None, false, |_| {}).unwrap_err();
    assert!(matches!(e, rsd::Error::Config(_)));
    assert!(e.to_string().contains("train-teacher"), "{e}");
}
