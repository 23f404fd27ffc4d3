use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modbot_core::synthesis::{check_design, correct_by_construction, CheckOutcome, SynthesisConfig};
use modbot_core::{Catalog, DesignResult, Limits, RobustnessConfig, SynthesisOutcome, Workspace};

mod output;
mod svg;

const EXIT_CONFIG: u8 = 1;
const EXIT_REJECTED: u8 = 2;

#[derive(Parser)]
#[command(name = "modbot", version, about = "Synthesize and check reconfigurable planar manipulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search structures and link lengths for a certified reach-avoid design.
    Synth(SynthArgs),
    /// Re-verify a stored design against a workspace.
    Check(CheckArgs),
}

#[derive(Args)]
struct Common {
    /// Workspace description (TOML).
    #[arg(long)]
    workspace: PathBuf,
    /// Module catalog (TOML); the built-in manipulator catalog if omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Bound on each joint torque.
    #[arg(long, default_value_t = 10.0)]
    ubound: f64,
    /// Slack ordering weight.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Abstraction cell size.
    #[arg(long, default_value_t = 0.1)]
    grid: f64,
    #[arg(long, default_value_t = 80)]
    gp_budget: usize,
    #[arg(long, default_value_t = 4)]
    max_links: usize,
    #[arg(long, default_value_t = 200)]
    kmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give up after this many seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Design file written by `synth`.
    #[arg(long)]
    design: PathBuf,
    /// Override the torque bound stored in the design.
    #[arg(long)]
    ubound: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    grid: Option<f64>,
}

#[derive(Debug)]
struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_CONFIG, e.to_string())
    }
}

fn load_inputs(c: &Common) -> Result<(Catalog, Workspace), Failure> {
    let catalog = match &c.catalog {
        Some(p) => Catalog::load(p)?,
        None => Catalog::manipulator(),
    };
    let ws = Workspace::load(&c.workspace)?;
    if ws.start.is_none() {
        return Err(Failure(EXIT_CONFIG, format!("{}: no start point", c.workspace.display())));
    }
    Ok((catalog, ws))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Failure(EXIT_CONFIG, format!("{}: {e}", p.display())))
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let (catalog, ws) = load_inputs(&a.common)?;
    let cfg = SynthesisConfig {
        cell: a.grid,
        robustness: RobustnessConfig { u_bound: a.ubound, epsilon: a.epsilon, dt: a.dt, ..RobustnessConfig::default() },
        limits: Limits {
            max_links: a.max_links,
            gp_budget: a.gp_budget,
            k_max: a.kmax,
            wall_clock_secs: a.time_limit,
            ..Limits::default()
        },
        seed: a.seed,
        ..SynthesisConfig::default()
    };
    let outcome = correct_by_construction(&catalog.srg, &ws, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure(EXIT_CONFIG, format!("{}: {e}", a.out.display())))?;
    let log = outcome.log();
    write(&a.out, "log.jsonl", &log.to_jsonl())?;
    write(&a.out, "history.csv", &output::history_csv(log))?;
    let aw = ws.abstract_grid(cfg.cell)?;
    let report = output::report(&outcome);
    write(&a.out, "report.txt", &report)?;
    print!("{report}");
    match &outcome {
        SynthesisOutcome::Success(d) => {
            write(&a.out, "design.json", &d.to_json())?;
            write(&a.out, "trajectory.csv", &output::trajectory_csv(d))?;
            write(&a.out, "workspace.svg", &svg::render(&ws, &aw, Some(d)))?;
            Ok(())
        }
        SynthesisOutcome::Unsynthesizable { reason, .. } => {
            write(&a.out, "workspace.svg", &svg::render(&ws, &aw, None))?;
            Err(Failure(EXIT_REJECTED, format!("unsynthesizable: {reason}")))
        }
    }
}

fn check(a: &CheckArgs) -> Result<(), Failure> {
    let (catalog, ws) = load_inputs(&a.common)?;
    let text = fs::read_to_string(&a.design).map_err(|e| Failure(EXIT_CONFIG, format!("{}: {e}", a.design.display())))?;
    let design = DesignResult::from_json(&text)?;
    let mut cfg = design.config.clone();
    if let Some(v) = a.ubound {
        cfg.robustness.u_bound = v;
    }
    if let Some(v) = a.epsilon {
        cfg.robustness.epsilon = v;
    }
    if let Some(v) = a.dt {
        cfg.robustness.dt = v;
    }
    if let Some(v) = a.grid {
        cfg.cell = v;
    }
    match check_design(&catalog.srg, &ws, &design, &cfg)? {
        CheckOutcome::Verified { rho, stored_exceeds_bound } => {
            println!("verified: {} with rho = {rho}", design.word);
            if stored_exceeds_bound {
                println!("note: stored controls exceed the bound {}; a re-solved control is within it", cfg.robustness.u_bound);
            }
            Ok(())
        }
        CheckOutcome::Rejected { step: Some(s), reason } => Err(Failure(EXIT_REJECTED, format!("rejected at step {s}: {reason}"))),
        CheckOutcome::Rejected { step: None, reason } => Err(Failure(EXIT_REJECTED, format!("rejected: {reason}"))),
    }
}

fn main() -> ExitCode {
    // usage errors share the config-error code; 2 is reserved for rejections
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("modbot: {msg}");
            ExitCode::from(code)
        }
    }
}
