//! `reluqc`: certify induced-l2 gains and stability margins of ReLU RNNs,
//! falsify by simulation, and regenerate the benchmark tables.
//!
//! Exit codes: 0 certified / success, 2 infeasible, falsified or a failed
//! table cell, 1 operational error.

mod repro;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use reluqc::certifier::{
    certify_gain, stability_margin, verify_certificate, BisectionOptions, CertifyOptions,
};
use reluqc::io::{parse_family, parse_system, Benchmark, ParametricFamily};
use reluqc::lifting::lift;
use reluqc::qc::QcKind;
use reluqc::sim::{empirical_gain_lower_bound, falsify_stability, simulate, FalsifyOptions};
use reluqc::sysmodel::StateSpace;
use reluqc::Error;

use report::{GainReport, MarginReport, SimulationReport};

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "reluqc", version, about = "Stability and l2-gain certificates for ReLU RNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize the certified induced-l2 gain bound at one lifting horizon.
    CertifyGain(CertifyGainArgs),
    /// Bisect on alpha for the largest certified stability margin.
    StabilityMargin(MarginArgs),
    /// Falsify stability from random initial states and estimate gains.
    Simulate(SimulateArgs),
    /// Regenerate a benchmark table with reference values and deviations.
    Repro(repro::ReproArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QcArg {
    Relu,
    Dh,
}

impl From<QcArg> for QcKind {
    fn from(q: QcArg) -> Self {
        match q {
            QcArg::Relu => QcKind::ReluFull,
            QcArg::Dh => QcKind::DoublyHyperdominant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkArg {
    Lurye,
    GainExample,
}

impl From<BenchmarkArg> for Benchmark {
    fn from(b: BenchmarkArg) -> Self {
        match b {
            BenchmarkArg::Lurye => Benchmark::Lurye,
            BenchmarkArg::GainExample => Benchmark::GainExample,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct SystemSource {
    /// Builtin benchmark plant.
    #[arg(long, value_enum)]
    benchmark: Option<BenchmarkArg>,
    /// Plant description file (JSON).
    #[arg(long)]
    system: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CertifyGainArgs {
    #[command(flatten)]
    source: SystemSource,
    /// alpha for the lurye benchmark.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, short = 'N', value_parser = clap::value_parser!(u32).range(1..))]
    horizon: u32,
    #[arg(long, value_enum, default_value = "relu")]
    qc: QcArg,
    /// Also include the lifted plant matrices in the report.
    #[arg(long)]
    include_lifted: bool,
    /// Report path; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct FamilySource {
    #[arg(long, value_enum)]
    benchmark: Option<BenchmarkArg>,
    /// Parametric family file: a plant description plus "alpha_slot".
    #[arg(long)]
    family: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MarginArgs {
    #[command(flatten)]
    source: FamilySource,
    #[arg(long, short = 'N', value_parser = clap::value_parser!(u32).range(1..))]
    horizon: u32,
    #[arg(long, value_enum, default_value = "relu")]
    qc: QcArg,
    #[arg(long, default_value_t = 0.0)]
    alpha_lo: f64,
    #[arg(long, default_value_t = 200.0)]
    alpha_hi: f64,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SystemSource,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 20)]
    num_ic: usize,
    #[arg(long, default_value_t = 10.0)]
    ic_std: f64,
    /// Steps per falsification rollout.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also estimate an empirical lower bound on the induced gain.
    #[arg(long)]
    estimate_gain: bool,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Steps per gain-estimation rollout (input active for the first half).
    #[arg(long, default_value_t = 300)]
    gain_steps: usize,
    /// Write one CSV per falsification rollout into this directory.
    #[arg(long)]
    trajectory_dir: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn resolve_system(source: &SystemSource, alpha: Option<f64>) -> Result<(String, StateSpace)> {
    match (&source.benchmark, &source.system) {
        (Some(b), _) => {
            let b = Benchmark::from(*b);
            Ok((b.name().to_string(), b.system(alpha)?))
        }
        (None, Some(path)) => {
            let ss = parse_system(&read(path)?).with_context(|| path.display().to_string())?;
            Ok((path.display().to_string(), ss))
        }
        (None, None) => bail!("one of --benchmark or --system is required"),
    }
}

fn resolve_family(source: &FamilySource) -> Result<(String, ParametricFamily)> {
    match (&source.benchmark, &source.family) {
        (Some(b), _) => {
            let b = Benchmark::from(*b);
            let fam = b
                .family()
                .with_context(|| format!("benchmark {} has no alpha parameter", b.name()))?;
            Ok((b.name().to_string(), fam))
        }
        (None, Some(path)) => {
            let fam = parse_family(&read(path)?).with_context(|| path.display().to_string())?;
            Ok((path.display().to_string(), fam))
        }
        (None, None) => bail!("one of --benchmark or --family is required"),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn cmd_certify_gain(args: &CertifyGainArgs) -> Result<ExitCode> {
    let (system, ss) = resolve_system(&args.source, args.alpha)?;
    let n = args.horizon as usize;
    let kind = QcKind::from(args.qc);
    let start = Instant::now();
    let outcome = certify_gain(&ss, n, kind, &CertifyOptions::from_env());
    let lifted = lift(&ss, n)?;
    let (report, code) = match outcome {
        Ok(cert) => {
            let check = verify_certificate(&cert, &lifted);
            (GainReport::certified(system, &cert, check), ExitCode::SUCCESS)
        }
        Err(Error::Infeasible(msg)) => (
            GainReport::infeasible(system, n, kind, msg, start.elapsed().as_secs_f64()),
            ExitCode::from(2),
        ),
        Err(e) => return Err(e.into()),
    };
    let report = if args.include_lifted { report.with_lifted(&lifted) } else { report };
    write_output(args.output.as_deref(), &to_json(&report)?)?;
    Ok(code)
}

fn cmd_stability_margin(args: &MarginArgs) -> Result<ExitCode> {
    let (system, family) = resolve_family(&args.source)?;
    let bisection = BisectionOptions {
        alpha_lo: args.alpha_lo,
        alpha_hi: args.alpha_hi,
        rel_tol: args.rel_tol,
    };
    let n = args.horizon as usize;
    let kind = QcKind::from(args.qc);
    let outcome =
        stability_margin(|a| family.build(a), n, kind, &bisection, &CertifyOptions::from_env())?;
    let certified = outcome.certificate.is_some();
    let report = MarginReport::new(system, n, kind, bisection, &outcome);
    write_output(args.output.as_deref(), &to_json(&report)?)?;
    Ok(if certified { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let (system, ss) = resolve_system(&args.source, args.alpha)?;
    let opts = FalsifyOptions {
        num_ic: args.num_ic,
        ic_std: args.ic_std,
        steps: args.steps,
        seed: args.seed,
    };
    let falsification = falsify_stability(&ss, &opts)?;
    let gain_lower_bound = if args.estimate_gain {
        Some(empirical_gain_lower_bound(&ss, args.trials, args.gain_steps, args.seed)?)
    } else {
        None
    };
    if let Some(dir) = &args.trajectory_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, trial) in falsification.trials.iter().enumerate() {
            let x0 = reluqc::nalgebra::DVector::from_column_slice(&trial.x0);
            let steps = trial.diverged_at.unwrap_or(args.steps);
            let traj = simulate(&ss, &x0, &[], steps)?;
            let path = dir.join(format!("trajectory_{i:03}.csv"));
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            traj.write_csv(std::io::BufWriter::new(file))?;
        }
    }
    let diverged = falsification.diverged;
    let report = SimulationReport {
        command: "simulate",
        system,
        alpha: args.alpha,
        falsification,
        gain_lower_bound,
        gain_trials: args.estimate_gain.then_some(args.trials),
        gain_steps: args.estimate_gain.then_some(args.gain_steps),
    };
    write_output(args.output.as_deref(), &to_json(&report)?)?;
    Ok(if diverged { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RELUQC_THREADS") {
        let threads: usize = v.parse().with_context(|| format!("RELUQC_THREADS = {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match &cli.command {
        Command::CertifyGain(args) => cmd_certify_gain(args),
        Command::StabilityMargin(args) => cmd_stability_margin(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Repro(args) => repro::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
