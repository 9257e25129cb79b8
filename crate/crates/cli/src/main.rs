//! `semidec`: simulations, bound sweeps and heterogeneity estimates from one
//! TOML configuration file.
//!
//! Exit status: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 bound outside its domain (S2S with K = 1, unreachable target).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use semidec_core::bounds::{RateModel, SweepAxis};
use semidec_core::{Error, Primitive};

use crate::commands::{BoundLine, SummaryRow};
use crate::config::{seed_override, Config, ConfigError, SEED_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "semidec",
    version,
    about = "Semi-decentralized federated learning experiments"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the engine for every requested primitive and seed.
    Simulate,
    /// Iteration and message complexity over a parameter grid.
    Sweep {
        /// sampling_rate, server_period or mixing_param.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        grid: Vec<f64>,
        /// Also simulate every grid point with the [run] settings.
        #[arg(long)]
        simulate: bool,
        #[arg(long, default_value_t = RateModel::Tuned)]
        model: RateModel,
    },
    /// Rounds, stepsize and message cost to reach the target accuracy.
    Bounds {
        #[arg(long, default_value_t = RateModel::Tuned)]
        model: RateModel,
        /// Evaluate a single primitive instead of both.
        #[arg(long)]
        primitive: Option<Primitive>,
    },
    /// Estimate the heterogeneity constants and write a bounds-ready config.
    MeasureHet,
}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFiniteState { .. } | Error::NotConverged { .. }) => 3,
        Some(Error::DivergentAtK1 | Error::Unreachable { .. }) => 4,
        Some(Error::Io(_) | Error::Csv(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4e}"))
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<16} {:<4} {:>5} {:>24} {:>24} {:>10} {:>10}",
        "fingerprint", "prim", "seeds", "final f_gap", "final |grad|^2", "uplinks", "downlinks"
    );
    for r in rows {
        println!(
            "{:<16} {:<4} {:>5} {:>11.4e} ± {:<10} {:>11.4e} ± {:<10} {:>10} {:>10}",
            r.fingerprint,
            r.primitive,
            r.seeds,
            r.f_gap_mean,
            fmt_opt(r.f_gap_stderr),
            r.grad_norm_sq_mean,
            fmt_opt(r.grad_norm_sq_stderr),
            r.uplinks,
            r.downlinks
        );
    }
}

fn print_bounds(lines: &[BoundLine], model: RateModel) {
    println!("model: {model}");
    println!("{:<4} {:>14} {:>12} {:>14}", "prim", "T", "eta*", "gamma");
    for l in lines {
        println!(
            "{:<4} {:>14} {:>12} {:>14.6e}",
            l.primitive,
            l.t_rounds,
            fmt_opt(l.eta_star),
            l.gamma
        );
    }
    if lines.len() == 2 {
        let name = |w: Option<Primitive>| w.map_or_else(|| "tie".to_string(), |p| p.to_string());
        println!("winner by T: {}", name(commands::winner(lines, |l| l.t_rounds as f64)));
        println!("winner by messages: {}", name(commands::winner(lines, |l| l.gamma)));
    }
}

fn seeds(cfg: &Config) -> Result<Vec<u64>> {
    let env = std::env::var(SEED_ENV).ok();
    match seed_override(env.as_deref())? {
        Some(s) => Ok(s),
        None => Ok(cfg.run()?.seeds.clone()),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ConfigError("--config <path> is required".into()))?;
    let cfg = Config::load(path)?;
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Simulate => {
            let rows = commands::simulate(&cfg, &seeds(&cfg)?, out)?;
            print_summary(&rows);
        }
        Command::Sweep {
            axis,
            grid,
            simulate,
            model,
        } => {
            let sim_seeds = if *simulate { Some(seeds(&cfg)?) } else { None };
            let res = commands::sweep(&cfg, *axis, grid, *model, sim_seeds.as_deref(), out)?;
            println!(
                "{:>12} {:>14} {:>14} {:>14} {:>14}",
                axis.name(),
                "T_s2s",
                "T_s2a",
                "gamma_s2s",
                "gamma_s2a"
            );
            for r in &res.bounds {
                println!(
                    "{:>12} {:>14} {:>14} {:>14.6e} {:>14.6e}",
                    r.axis_value, r.t_s2s, r.t_s2a, r.gamma_s2s, r.gamma_s2a
                );
            }
            if let Some(sim) = &res.simulated {
                println!("{:>12} {:<4} {:>24}", axis.name(), "prim", "final f_gap");
                for r in sim {
                    println!(
                        "{:>12} {:<4} {:>11.4e} ± {:<10}",
                        r.axis_value,
                        r.primitive,
                        r.f_gap_mean,
                        fmt_opt(r.f_gap_stderr)
                    );
                }
            }
        }
        Command::Bounds { model, primitive } => {
            let primitives = match primitive {
                Some(p) => vec![*p],
                None => Primitive::BOTH.to_vec(),
            };
            let lines = commands::bounds(&cfg, *model, &primitives)?;
            print_bounds(&lines, *model);
        }
        Command::MeasureHet => {
            let r = commands::measure_het(&cfg, out)?;
            println!("zeta_intra = {:.6e}", r.estimate.zeta_intra);
            println!("zeta_inter = {:.6e}", r.estimate.zeta_inter);
            println!("p          = {:.6e}", r.p);
            println!("L          = {:.6e}", r.bounds.l);
            println!("probes     = {}", r.estimate.probe_count);
            println!("wrote {}", r.written.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
