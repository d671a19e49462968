use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rsd::config::RunConfig;
use rsd::eval::AblationKind;
use rsd::run::{self, DistillMethod, RunDir};
use rsd::verify::{self, VerifyOptions};

const ABOUT: &str = "Residual shifting distillation of a toy super-resolution diffusion teacher";

fn defaults_help() -> String {
    format!(
        "Configuration defaults (override with --config FILE or --set section.key=value):\n\n{}\n\
         Runs live under $RSD_RUN_ROOT (default ./runs) as <timestamp>-<name>/.",
        RunConfig::default().to_toml()
    )
}

#[derive(Parser)]
#[command(name = "rsd", version, about = ABOUT, after_long_help = defaults_help())]
struct Cli {
    /// TOML config file; a run's own config.toml is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set distill.K=5 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Use this run directory instead of creating a new one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Run name for new directories and for --resume lookup.
    #[arg(long, default_value = "run", global = true)]
    name: String,

    /// Continue the latest run called --name (or --run-dir) from its checkpoints.
    #[arg(long, global = true)]
    resume: bool,

    /// Teacher checkpoint to use instead of the run's own.
    #[arg(long, global = true)]
    teacher: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rsd,
    Vsd,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Multistep,
    Losses,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the paired train/test sets.
    MakeData,
    /// Train the multistep teacher.
    TrainTeacher,
    /// Distill a one-step student from the teacher.
    Distill {
        #[arg(long, value_enum, default_value = "rsd")]
        method: MethodArg,
    },
    /// Compare teacher, students and the upsampling baseline on the test set.
    Eval,
    /// Train and evaluate one student per ablation setting.
    Ablate {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Print the schedule table and run the numerical identity checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render CSV logs and reports as SVG line charts.
    Plot {
        /// CSV files; defaults to every log and report in the run.
        files: Vec<PathBuf>,
    },
}

enum Failure {
    User(String),
    Verification,
}

impl From<rsd::Error> for Failure {
    fn from(e: rsd::Error) -> Self {
        Failure::User(e.to_string())
    }
}

fn open_run(cli: &Cli) -> Result<RunDir, Failure> {
    let root = run::run_root();
    let run = match (&cli.run_dir, cli.resume) {
        (Some(p), _) => RunDir::open(p)?,
        (None, true) => RunDir::latest(&root, &cli.name)?.ok_or_else(|| {
            Failure::User(format!("--resume: no run named {:?} under {}", cli.name, root.display()))
        })?,
        (None, false) => RunDir::create(&root, &cli.name)?,
    };
    eprintln!("run directory: {}", run.path().display());
    Ok(run)
}

fn load_config(cli: &Cli, run: Option<&RunDir>) -> Result<RunConfig, Failure> {
    if let Some(p) = &cli.config {
        return Ok(RunConfig::load(p, &cli.overrides)?);
    }
    if let Some(p) = run.map(RunDir::config_path).filter(|p| p.exists()) {
        return Ok(RunConfig::load(&p, &cli.overrides)?);
    }
    Ok(RunConfig::parse_with("", &cli.overrides)?)
}

fn plot_file(csv: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(csv).map_err(|e| Failure::User(format!("{}: {e}", csv.display())))?;
    let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    run::write_text(out, &rsd::plot::csv_to_svg(&text, &title)?)?;
    println!("{}", out.display());
    Ok(())
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    v
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let teacher = cli.teacher.as_deref();
    if let Cmd::Verify { seed } = cli.cmd {
        let cfg = load_config(cli, None)?;
        print!("{}", cfg.schedule.build()?.to_csv());
        println!();
        let checks = verify::run_all(&VerifyOptions { seed, ..VerifyOptions::default() })?;
        print!("{}", verify::to_csv(&checks));
        return if checks.iter().all(|c| c.pass()) { Ok(()) } else { Err(Failure::Verification) };
    }
    if let Cmd::Plot { files } = &cli.cmd {
        if !files.is_empty() {
            for f in files {
                plot_file(f, &f.with_extension("svg"))?;
            }
            return Ok(());
        }
        if cli.run_dir.is_none() && !cli.resume {
            return Err(Failure::User("plot needs CSV files, --run-dir or --resume".into()));
        }
    }
    let run = open_run(cli)?;
    let cfg = load_config(cli, Some(&run))?;
    run.echo_config(&cfg)?;
    match &cli.cmd {
        Cmd::MakeData => {
            let (train, test) = run::make_data(&run, &cfg)?;
            eprintln!("wrote {} train and {} test pairs", train.len(), test.len());
        }
        Cmd::TrainTeacher => {
            run::train_teacher(&run, &cfg, cli.resume, |step, loss| eprintln!("teacher step {step} loss {loss:.6}"))?;
            println!("{}", run.checkpoint(run::TEACHER).display());
        }
        Cmd::Distill { method } => {
            let m = match method {
                MethodArg::Rsd => DistillMethod::Rsd,
                MethodArg::Vsd => DistillMethod::Vsd,
            };
            run::distill(&run, &cfg, m, teacher, cli.resume, |r| {
                if r.step % 50 == 0 {
                    eprintln!("{} step {} L_theta {:.6} L_fake {:.6}", m.name(), r.step, r.l_theta, r.l_fake);
                }
            })?;
            println!("{}", run.checkpoint(&m.generator_checkpoint()).display());
        }
        Cmd::Eval => print!("{}", run::evaluate(&run, &cfg, teacher)?.to_csv()),
        Cmd::Ablate { kind } => {
            let kind = match kind {
                KindArg::Multistep => AblationKind::Multistep,
                KindArg::Losses => AblationKind::Losses,
            };
            let report = run::ablate(&run, &cfg, kind, teacher, |r| eprintln!("{}", r.csv_row()))?;
            print!("{}", report.to_csv());
        }
        Cmd::Plot { .. } => {
            let mut files = csv_files(&run.path().join("logs"));
            files.extend(csv_files(&run.path().join("reports")));
            for f in files {
                let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                plot_file(&f, &run.report(&format!("{name}.svg")))?;
            }
        }
        Cmd::Verify { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
    }
}
