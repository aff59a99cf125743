use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use darboux::Error;
use darboux::config::RunConfig;
use darboux::pipeline::{PipelineRun, Stage, run_pipeline};

/// Local isometric embedding through the Darboux equation.
#[derive(Parser, Debug)]
#[command(name = "darboux", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Last stage to run when no subcommand is given.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_stage)]
    stage: Option<Stage>,

    /// Root of the run directories (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Nodes per axis (overrides `metric.resolution`).
    #[arg(long, global = true, value_name = "N")]
    resolution: Option<usize>,

    /// Overrides `schedule.epsilon`.
    #[arg(long, global = true, value_name = "X")]
    epsilon: Option<f64>,

    /// Overrides `schedule.max_iter`.
    #[arg(long, global = true, value_name = "N")]
    max_iter: Option<usize>,

    /// Log stage progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Christoffel symbols, curvature and its vanishing order.
    Curvature,
    /// Approximate solution z0.
    Seed,
    /// Sector decomposition of the zero set of K.
    Regions,
    /// Per-region iteration and patching.
    Solve,
    /// Development of the flat metric and the surface mesh.
    Develop,
    /// Full run with every acceptance check.
    Verify,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Curvature => Stage::Curvature,
            Command::Seed => Stage::Seed,
            Command::Regions => Stage::Regions,
            Command::Solve => Stage::Solve,
            Command::Develop => Stage::Develop,
            Command::Verify => Stage::Verify,
        }
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse::<Stage>().map_err(|e| e.to_string())
}

fn load(cli: &Cli) -> darboux::Result<(RunConfig, Stage)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(n) = cli.resolution {
        cfg.metric.resolution = n;
    }
    if let Some(e) = cli.epsilon {
        cfg.schedule.epsilon = e;
    }
    if let Some(m) = cli.max_iter {
        cfg.schedule.max_iter = m;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    let stage = match (cli.command.map(Command::stage), cli.stage) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!("subcommand `{a}` conflicts with --stage {b}")));
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => Stage::Verify,
    };
    Ok((cfg, stage))
}

fn summarize(run: &PipelineRun) {
    let r = &run.report;
    println!("run directory: {}", run.dir.display());
    let done: Vec<&str> = r.completed.iter().map(|s| s.name()).collect();
    println!("completed: {}", done.join(" "));
    if let Some(c) = &r.curvature {
        println!("curvature: K(0) = {:.3e}, N = {}, path {:?}", c.k_origin, c.n_used, c.path);
    }
    if let Some(s) = &r.seed {
        match s.decay_slope {
            Some(p) => println!("seed: degree {}, residual decay slope {p:.2}", s.degree),
            None => println!("seed: degree {}", s.degree),
        }
    }
    for v in &r.convergence {
        println!(
            "region {}: sup|Phi| {:.3e} -> {:.3e} (x{:.3e}) in {} steps, converged {}",
            v.label, v.initial, v.best, v.reduction, v.iterations, v.converged
        );
    }
    if let Some(e) = &r.embedding {
        println!("isometry: relative error {:.3e}, loop defect {:.3e}", e.rel_error, e.loop_defect);
    }
    for c in &r.checks {
        let tag = match (c.pass, c.required) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "note",
        };
        println!("[{tag}] {}: {:.3e} <= {:.3e}", c.name, c.value, c.bound);
    }
    for w in r.schedule_warnings.iter().chain(&r.warnings) {
        println!("warning: {w}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let run = load(&cli).and_then(|(cfg, stage)| run_pipeline(&cfg, stage));
    match run {
        Ok(run) => {
            summarize(&run);
            if let Some(e) = &run.error {
                eprintln!("error: {e}");
            }
            ExitCode::from(run.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
