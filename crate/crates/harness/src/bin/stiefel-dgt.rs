use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stiefel_dgt::config::{ExperimentConfig, TraceFormat};
use stiefel_dgt::experiment::{self, Prepared};
use stiefel_dgt::presets;
use stiefel_dgt_core::algorithms::{Algorithm, ExitReason};

/// Decentralized retraction-free gradient tracking on the Stiefel manifold.
#[derive(Parser)]
#[command(name = "stiefel-dgt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm.
    Run(RunArgs),
    /// Run several algorithms from the same initial point, network and step size.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated algorithm names; defaults to `algorithm.compare`.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
    },
    /// Replay the snapshots of a run directory through the inequality audits.
    Audit {
        /// Run directory (one `compare` subdirectory or a `run` output).
        #[arg(long = "run-dir", alias = "out")]
        run_dir: PathBuf,
        /// Multiplies the merit penalty weight before auditing.
        #[arg(long, default_value_t = 1.0)]
        gamma_scale: f64,
    },
    /// Print the resolved constants and step-size limits.
    Constants(Source),
}

#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the problem seed (and the initial-point seed unless fixed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Store snapshots and audit them while running.
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    audit_stride: Option<usize>,
    /// csv, jsonl or both.
    #[arg(long)]
    format: Option<TraceFormat>,
    /// Skip one header line of a CSV dataset.
    #[arg(long)]
    header: bool,
    /// Write zero wall times so reruns produce identical files.
    #[arg(long)]
    zero_wall_time: bool,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => bail!("pass --config or --preset"),
        };
        if let Some(seed) = self.seed {
            cfg.problem.seed = seed;
        }
        Ok(cfg)
    }
}

impl RunArgs {
    fn prepare(&self) -> Result<Prepared> {
        let mut cfg = self.source.load()?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if self.audit {
            cfg.output.audit = true;
        }
        if let Some(s) = self.audit_stride {
            cfg.output.audit_stride = s;
        }
        if let Some(f) = self.format {
            cfg.output.format = f;
        }
        if self.header {
            cfg.problem.header = true;
        }
        if self.zero_wall_time {
            cfg.output.zero_wall_time = true;
        }
        experiment::prepare(&cfg)
    }
}

fn exit_code(exit: &ExitReason) -> ExitCode {
    match exit {
        ExitReason::Diverged { iteration, .. } => {
            eprintln!("diverged at iteration {iteration}");
            ExitCode::from(3)
        }
        _ => ExitCode::SUCCESS,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    stiefel_dgt::init_threads()?;
    match cli.command {
        Command::Run(args) => {
            let prep = args.prepare()?;
            let res = experiment::run(&prep)?;
            let s = &res.summary;
            println!(
                "{}: {:?} after {} iterations, |Λ(x̄)| = {:.3e}, consensus = {:.3e}, feasibility = {:.3e}",
                s.algorithm,
                s.exit,
                s.iterations,
                s.last.landing_norm_avg,
                s.last.consensus_x,
                s.last.feasibility_avg
            );
            if let Some(t) = &s.audit {
                print!("{}", t.table());
            }
            println!("outputs in {}", prep.config.output.dir.display());
            Ok(exit_code(&s.exit))
        }
        Command::Compare { run, algorithms } => {
            let prep = run.prepare()?;
            let names = if algorithms.is_empty() {
                prep.config.algorithm.compare.clone()
            } else {
                algorithms
            };
            let algs = names
                .iter()
                .map(|n| n.parse::<Algorithm>())
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = experiment::compare(&prep, &algs)?;
            println!(
                "{:<22} {:>10} {:>12} {:>10} {:>14} {:>12} {:>14}",
                "algorithm",
                "exit",
                "iterations",
                "wall [s]",
                "qr/svd count",
                "feasibility",
                "x̄ feasibility"
            );
            let mut code = ExitCode::SUCCESS;
            for e in &cmp.entries {
                let exit = match e.exit {
                    ExitReason::Converged => "converged",
                    ExitReason::MaxIters => "max_iters",
                    ExitReason::Diverged { .. } => "diverged",
                };
                println!(
                    "{:<22} {:>10} {:>12} {:>10.2} {:>14} {:>12.3e} {:>14.3e}",
                    e.algorithm.name(),
                    exit,
                    e.iterations,
                    e.wall_time_s,
                    e.qr_svd_count,
                    e.final_feasibility,
                    e.mean_iterate_feasibility
                );
                if matches!(e.exit, ExitReason::Diverged { .. }) {
                    code = exit_code(&e.exit);
                }
            }
            Ok(code)
        }
        Command::Audit {
            run_dir,
            gamma_scale,
        } => {
            let out = experiment::audit_dir(&run_dir, gamma_scale)
                .with_context(|| format!("audit of {} failed", run_dir.display()))?;
            println!(
                "{} snapshots, {} points, gamma = {:.6e} (scale {})",
                out.tally.snapshots, out.tally.points, out.gamma, out.gamma_scale
            );
            print!("{}", out.tally.table());
            let failures = out.tally.failures();
            if failures > 0 {
                eprintln!("{failures} audit checks failed");
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Constants(src) => {
            let prep = experiment::prepare(&src.load()?)?;
            let c = experiment::resolved_constants(&prep, &prep.consts);
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
