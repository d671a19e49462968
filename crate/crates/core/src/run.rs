//! Run directories and the end-to-end pipeline stages that write into them.
//!
//! Layout under `<root>/<timestamp>-<name>/`:
//!
//! ```text
//! config.toml            effective configuration
//! data/{train,test}.rsdt
//! checkpoints/*.ckpt
//! logs/*.csv
//! reports/*.csv, *.svg
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::checkpoint::{load_unet, save_unet, Checkpoint};
use crate::config::RunConfig;
use crate::data::{load_dataset, make_paired, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{ablation_report, comparison_report, one_step_student, AblationKind, EvalReport, EvalRow, Method};
use crate::nn::UNet;
use crate::predictors::Generator;
use crate::rsd::{distill_with, log_csv, DistillConfig, DistillContext, DistillState, StepRecord};
use crate::teacher::{encode_dataset, loss_log_csv, TeacherRun};
use crate::vsd::distill_vsd_with;

pub const RUN_ROOT_ENV: &str = "RSD_RUN_ROOT";

/// State checkpoints are refreshed this often (in optimizer steps).
pub const CHECKPOINT_EVERY: usize = 100;

/// `$RSD_RUN_ROOT`, or `runs` in the working directory.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    path: PathBuf,
}

const SUBDIRS: [&str; 4] = ["data", "checkpoints", "logs", "reports"];

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::Config(format!("run name must be nonempty [A-Za-z0-9_-], got {name:?}")));
    }
    Ok(())
}

impl RunDir {
    /// A fresh `<root>/<YYYYmmdd-HHMMSS>-<name>` directory; a numeric suffix
    /// keeps two runs started in the same second apart.
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        check_name(name)?;
        mkdir(root)?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let mut path = root.join(format!("{stamp}-{name}"));
        let mut k = 2;
        while path.exists() {
            path = root.join(format!("{stamp}-{name}-{k}"));
            k += 1;
        }
        Self::open(&path)
    }

    /// Open (creating if needed) an explicit run directory.
    pub fn open(path: &Path) -> Result<Self> {
        for d in SUBDIRS {
            mkdir(&path.join(d))?;
        }
        Ok(RunDir { path: path.to_path_buf() })
    }

    /// The most recent run called `name` under `root`, by directory name.
    pub fn latest(root: &Path, name: &str) -> Result<Option<Self>> {
        check_name(name)?;
        if !root.exists() {
            return Ok(None);
        }
        let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut best: Option<(String, PathBuf)> = None;
        for e in entries {
            let e = e.map_err(|e| Error::io(root, e))?;
            let file_name = e.file_name().to_string_lossy().into_owned();
            if !e.path().is_dir() || !run_name_matches(&file_name, name) {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _)| file_name > *b) {
                best = Some((file_name, e.path()));
            }
        }
        best.map(|(_, p)| Self::open(&p)).transpose()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config_path(&self) -> PathBuf {
        self.path.join("config.toml")
    }

    pub fn data_file(&self, split: &str) -> PathBuf {
        self.path.join("data").join(format!("{split}.rsdt"))
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.path.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.path.join("logs").join(format!("{name}.csv"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.path.join("reports").join(name)
    }

    pub fn echo_config(&self, cfg: &RunConfig) -> Result<()> {
        write_text(&self.config_path(), &cfg.to_toml())
    }

    /// The config echoed into this run, if any.
    pub fn saved_config(&self) -> Result<Option<RunConfig>> {
        let p = self.config_path();
        if !p.exists() {
            return Ok(None);
        }
        RunConfig::load(&p, &[]).map(Some)
    }
}

/// `<8 digits>-<6 digits>-<name>` with an optional `-<k>` suffix.
fn run_name_matches(dir: &str, name: &str) -> bool {
    let b = dir.as_bytes();
    if b.len() < 16 || !b[..8].iter().all(u8::is_ascii_digit) || b[8] != b'-' || !b[9..15].iter().all(u8::is_ascii_digit) || b[15] != b'-' {
        return false;
    }
    let rest = &dir[16..];
    rest == name || rest.strip_prefix(name).and_then(|s| s.strip_prefix('-')).is_some_and(|k| !k.is_empty() && k.bytes().all(|c| c.is_ascii_digit()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))).collect()
}

/// Generate the paired data and save both splits.
pub fn make_data(run: &RunDir, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = make_paired(&cfg.data)?;
    save_dataset(&run.data_file("train"), &train)?;
    save_dataset(&run.data_file("test"), &test)?;
    Ok((train, test))
}

/// Saved splits when present, otherwise generate them.
pub fn load_or_make_data(run: &RunDir, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (tr, te) = (run.data_file("train"), run.data_file("test"));
    if tr.exists() && te.exists() {
        Ok((load_dataset(&tr)?, load_dataset(&te)?))
    } else {
        make_data(run, cfg)
    }
}

pub const TEACHER: &str = "teacher";
const TEACHER_RUN: &str = "teacher_run";
const TEACHER_LOG: &str = "teacher_loss";

/// Train the teacher. With `resume`, continue from the saved run state and
/// keep the logged steps up to it. Writes `teacher.ckpt`, the run state and
/// the loss log.
pub fn train_teacher(run: &RunDir, cfg: &RunConfig, resume: bool, mut progress: impl FnMut(usize, f64)) -> Result<UNet> {
    let s = cfg.schedule.build()?;
    let (train, _) = load_or_make_data(run, cfg)?;
    let codec = cfg.data.codec.build();
    let data = encode_dataset(codec.as_ref(), &train);
    let tc = &cfg.teacher;
    let state_path = run.checkpoint(TEACHER_RUN);
    let mut state = if resume && state_path.exists() {
        let mut st = TeacherRun::from_checkpoint(&Checkpoint::load(&state_path)?, tc)?;
        let log_path = run.log(TEACHER_LOG);
        if log_path.exists() {
            st.log = read_csv::<(usize, f64)>(&log_path)?.into_iter().filter(|(k, _)| *k <= st.step).collect();
        }
        st
    } else {
        TeacherRun::new(tc.init_net(train.shape)?, tc)
    };
    while state.step < tc.steps {
        let target = (state.step + CHECKPOINT_EVERY).min(tc.steps);
        let chunk = crate::teacher::TeacherTrainConfig { steps: target, ..tc.clone() };
        state.run(&s, &chunk, &data)?;
        if let Some(&(k, l)) = state.log.last() {
            progress(k, l);
        }
        state.to_checkpoint().save(&state_path)?;
        write_text(&run.log(TEACHER_LOG), &loss_log_csv(&state.log))?;
    }
    save_unet(&run.checkpoint(TEACHER), &state.net)?;
    write_text(&run.log(TEACHER_LOG), &loss_log_csv(&state.log))?;
    Ok(state.net)
}

/// The teacher at `path`, or this run's; a missing file is a user error
/// that says how to produce it.
pub fn load_teacher(run: &RunDir, path: Option<&Path>) -> Result<UNet> {
    let p = path.map(Path::to_path_buf).unwrap_or_else(|| run.checkpoint(TEACHER));
    if !p.exists() {
        return Err(Error::Config(format!(
            "no teacher checkpoint at {}; run `rsd train-teacher --run-dir {}` first or pass --teacher <path>",
            p.display(),
            run.path().display()
        )));
    }
    load_unet(&p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMethod {
    Rsd,
    Vsd,
}

impl DistillMethod {
    pub fn name(self) -> &'static str {
        match self {
            DistillMethod::Rsd => "rsd",
            DistillMethod::Vsd => "vsd",
        }
    }

    pub fn generator_checkpoint(self) -> String {
        format!("generator_{}", self.name())
    }
}

fn load_generator(path: &Path) -> Result<Generator> {
    Generator::from_net(Checkpoint::load(path)?.to_unet()?)
}

/// Distill the run's teacher (or `teacher_path`) with `method`. Writes the
/// raw and EMA generators, the resumable state and the loss log.
pub fn distill(
    run: &RunDir,
    cfg: &RunConfig,
    method: DistillMethod,
    teacher_path: Option<&Path>,
    resume: bool,
    mut progress: impl FnMut(&StepRecord),
) -> Result<Generator> {
    let teacher = load_teacher(run, teacher_path)?;
    let s = cfg.schedule.build()?;
    let (train, _) = load_or_make_data(run, cfg)?;
    let codec = cfg.data.codec.build();
    let dcfg: DistillConfig = match method {
        DistillMethod::Rsd => cfg.distill.clone(),
        DistillMethod::Vsd => cfg.vsd.as_distill(&s),
    };
    let ctx = DistillContext::new(&s, &teacher, codec.as_ref(), &train.pairs, dcfg.timesteps(&s)?)?;
    let name = method.name();
    let state_path = run.checkpoint(&format!("distill_{name}_state"));
    let log_path = run.log(&format!("distill_{name}"));
    let mut state = if resume && state_path.exists() {
        let mut st = DistillState::from_checkpoint(&Checkpoint::load(&state_path)?, &teacher, &dcfg)?;
        if log_path.exists() {
            st.log = read_csv::<StepRecord>(&log_path)?.into_iter().filter(|r| r.step as u64 <= st.gen_steps).collect();
        }
        st
    } else {
        DistillState::from_teacher(&teacher, &dcfg)
    };
    let on_step = |st: &DistillState| -> Result<()> {
        if let Some(r) = st.log.last() {
            progress(r);
        }
        if st.gen_steps as usize % CHECKPOINT_EVERY == 0 {
            st.to_checkpoint().save(&state_path)?;
            write_text(&log_path, &log_csv(&st.log))?;
        }
        Ok(())
    };
    match method {
        DistillMethod::Rsd => distill_with(&mut state, &dcfg, &ctx, on_step)?,
        DistillMethod::Vsd => distill_vsd_with(&mut state, &cfg.vsd, &ctx, on_step)?,
    }
    state.to_checkpoint().save(&state_path)?;
    write_text(&log_path, &log_csv(&state.log))?;
    let gen_name = method.generator_checkpoint();
    save_unet(&run.checkpoint(&gen_name), state.generator.net())?;
    save_unet(&run.checkpoint(&format!("{gen_name}_ema")), state.ema_generator()?.net())?;
    Ok(state.generator)
}

/// Teacher, every distilled student present in the run, and the upsampling
/// baseline on the test split. Writes `reports/eval.csv`.
pub fn evaluate(run: &RunDir, cfg: &RunConfig, teacher_path: Option<&Path>) -> Result<EvalReport> {
    let teacher = load_teacher(run, teacher_path)?;
    let s = cfg.schedule.build()?;
    let (_, test) = load_or_make_data(run, cfg)?;
    let codec = cfg.data.codec.build();
    let mut gens = Vec::new();
    for m in [DistillMethod::Rsd, DistillMethod::Vsd] {
        let p = run.checkpoint(&m.generator_checkpoint());
        if p.exists() {
            gens.push((m.name(), load_generator(&p)?));
        }
    }
    let students: Vec<Method> = gens.iter().map(|(n, g)| one_step_student(n, g, &s)).collect();
    let report = comparison_report(&s, codec.as_ref(), &teacher, &students, &test.pairs, &cfg.eval, "toy")?;
    write_text(&run.report("eval.csv"), &report.to_csv())?;
    Ok(report)
}

pub fn ablation_file(kind: AblationKind) -> String {
    format!("ablation_{}.csv", if kind == AblationKind::Multistep { "multistep" } else { "losses" })
}

/// Train and evaluate one student per grid entry around `[distill]`.
pub fn ablate(
    run: &RunDir,
    cfg: &RunConfig,
    kind: AblationKind,
    teacher_path: Option<&Path>,
    on_row: impl FnMut(&EvalRow),
) -> Result<EvalReport> {
    let teacher = load_teacher(run, teacher_path)?;
    let s = cfg.schedule.build()?;
    let (train, test) = load_or_make_data(run, cfg)?;
    let codec = cfg.data.codec.build();
    let report =
        ablation_report(kind, &s, &cfg.distill, &teacher, codec.as_ref(), &train.pairs, &test.pairs, &cfg.eval, on_row)?;
    write_text(&run.report(&ablation_file(kind)), &report.to_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_names() {
        assert!(run_name_matches("20260101-120000-demo", "demo"));
        assert!(run_name_matches("20260101-120000-demo-3", "demo"));
        assert!(!run_name_matches("20260101-120000-demo-x", "demo"));
        assert!(!run_name_matches("20260101-120000-demos", "demo"));
        assert!(!run_name_matches("demo", "demo"));
        assert!(check_name("a/b").is_err());
    }

    #[test]
    fn create_and_find_latest() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(root.path(), "x").unwrap();
        let b = RunDir::create(root.path(), "x").unwrap();
        assert_ne!(a, b);
        for d in SUBDIRS {
            assert!(b.path().join(d).is_dir());
        }
        assert_eq!(RunDir::latest(root.path(), "x").unwrap(), Some(b));
        assert_eq!(RunDir::latest(root.path(), "y").unwrap(), None);
    }
}
