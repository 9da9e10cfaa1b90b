//! Command-line runner for rig bundle-adjustment experiments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rigba::eval::{evaluate, DriftReport};
use rigba::experiment::{compare, solve_scene, trace_csv, ExperimentConfig};
use rigba::problem::RigProblem;
use rigba::sim::{read_problem, write_problem};
use rigba::solver::Mode;

#[derive(Parser)]
#[command(
    name = "rigba",
    version,
    about = "Constrained bundle adjustment for two-camera rigs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (ground truth and perturbed initial estimate).
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct a problem file incrementally and write the solution.
    Solve {
        /// Problem file supplying topology, intrinsics and initial poses.
        problem: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a solved problem against ground truth.
    Eval {
        solved: PathBuf,
        truth: PathBuf,
        /// Solution to report the improvement against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both modes over several seeds and summarize.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Traditional,
    Constrained,
}

enum Failure {
    Config(String),
    Parse(String),
    Solver(String),
    Eval(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Parse(_) => 3,
            Failure::Solver(_) => 4,
            Failure::Eval(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Eval(m) => write!(f, "evaluation error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(mode) = common.mode {
        config.mode = match mode {
            ModeArg::Traditional => Mode::Traditional,
            ModeArg::Constrained => Mode::Constrained,
        };
    }
    if let Some(lambda) = common.lambda {
        config.lambda = lambda;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    config
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn out_dir(path: impl AsRef<Path>) -> Result<PathBuf, Failure> {
    let path = path.as_ref().to_path_buf();
    fs::create_dir_all(&path).map_err(io_err(&path))?;
    Ok(path)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(&path, contents).map_err(io_err(&path))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn read(path: &Path) -> Result<RigProblem, Failure> {
    read_problem(path).map_err(|e| match e {
        rigba::Error::Io(io) => Failure::Io(format!("{}: {io}", path.display())),
        other => Failure::Parse(format!("{}: {other}", path.display())),
    })
}

fn save(problem: &RigProblem, path: PathBuf) -> Result<(), Failure> {
    write_problem(problem, &path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// ASCII PLY with one vertex per reconstructed landmark.
fn landmarks_ply(problem: &RigProblem) -> String {
    let points: Vec<_> = problem.landmarks.values().flatten().collect();
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    for p in points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

fn cmd_generate(common: &Common) -> Result<(), Failure> {
    let config = load_config(common)?;
    let bundle = config
        .generate_scene()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let dir = out_dir(&config.output_dir)?;
    save(&bundle.truth, dir.join("truth.rigba"))?;
    save(&bundle.initial, dir.join("initial.rigba"))?;
    let sidecar = serde_json::json!({
        "seed": config.seed,
        "config": config,
        "scene": bundle.metadata,
    });
    write(dir.join("scene.json"), to_json(&sidecar))?;
    let t = &bundle.truth;
    println!(
        "images {} landmarks {} observations {} rig pairs {}",
        t.images.len(),
        t.landmarks.len(),
        t.observations.len(),
        t.rig_pairs.len()
    );
    Ok(())
}

fn cmd_solve(problem: &Path, common: &Common) -> Result<(), Failure> {
    let config = load_config(common)?;
    let input = read(problem)?;
    let (solved, report) =
        solve_scene(&input, &config).map_err(|e| Failure::Solver(e.to_string()))?;
    let dir = out_dir(&config.output_dir)?;
    save(&solved, dir.join("solved.rigba"))?;
    write(dir.join("trace.csv"), trace_csv(&report))?;
    write(dir.join("solve_report.json"), to_json(&report))?;
    write(dir.join("landmarks.ply"), landmarks_ply(&solved))?;
    let last = report
        .final_report
        .as_ref()
        .or(report.steps.last().map(|s| &s.report));
    if let Some(r) = last {
        println!(
            "reprojection {:.6e} baseline {:.6e} termination {:?}",
            r.final_cost.reprojection, r.final_cost.baseline, r.termination
        );
    }
    if !report.skipped.is_empty() {
        println!("skipped time indices {:?}", report.skipped);
    }
    Ok(())
}

fn drift_report(solved: &Path, truth: &RigProblem) -> Result<DriftReport, Failure> {
    let solved = read(solved)?;
    evaluate(&solved, truth).map_err(|e| Failure::Eval(e.to_string()))
}

fn cmd_eval(
    solved: &Path,
    truth: &Path,
    baseline: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let truth = read(truth)?;
    let mut report = drift_report(solved, &truth)?;
    if let Some(b) = baseline {
        report.compare_to(&drift_report(b, &truth)?);
    }
    let dir = out_dir(out.unwrap_or(Path::new(".")))?;
    write(dir.join("report.json"), to_json(&report))?;
    write(dir.join("report.csv"), report.to_csv())?;
    println!(
        "mean absolute distance {:.6} (std {:.6}) endpoint drift {:.6}",
        report.mean_absolute_distance, report.std_deviation, report.endpoint_drift.norm
    );
    if let Some(p) = report.improvement_percent {
        println!("improvement over baseline {p:.2}%");
    }
    Ok(())
}

fn cmd_compare(common: &Common, n_seeds: u64) -> Result<(), Failure> {
    if n_seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".into()));
    }
    let config = load_config(common)?;
    let seeds: Vec<u64> = (0..n_seeds).map(|i| config.seed + i).collect();
    let summary = compare(&config, &seeds);
    let dir = out_dir(&config.output_dir)?;
    for run in &summary.runs {
        let seed_dir = out_dir(dir.join(format!("seed_{}", run.seed)))?;
        let name = rigba::experiment::mode_name(run.mode);
        write(seed_dir.join(format!("{name}.json")), to_json(run))?;
    }
    write(dir.join("summary.json"), to_json(&summary))?;
    write(dir.join("summary.csv"), summary.table_csv())?;
    write(dir.join("runs.csv"), summary.runs_csv())?;
    print!("{}", summary.table_csv());
    info!(
        "constrained lower endpoint drift in {} of {} seeds",
        summary.n_lower_endpoint_drift, summary.n_paired
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Solve { problem, common } => cmd_solve(problem, common),
        Command::Eval {
            solved,
            truth,
            baseline,
            out,
        } => cmd_eval(solved, truth, baseline.as_deref(), out.as_deref()),
        Command::Compare { common, seeds } => cmd_compare(common, *seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
