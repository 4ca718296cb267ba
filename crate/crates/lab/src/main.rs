use std::path::PathBuf;
use std::process::ExitCode;

use circuitlab::aggregate::aggregate;
use circuitlab::config::ExperimentConfig;
use circuitlab::manifest::load_manifests;
use circuitlab::pipeline::run_grid;
use circuitlab::report::{load_report, write_report, MANIFEST_DIR};
use circuitlab::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "circuitlab", version, about = "Train VAE grids and analyse their latent circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and analyse every grid cell, then write the reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Recompute the aggregate reports from saved manifests.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Run the grid with the grouping ablation enabled.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Random groupings per model.
        #[arg(long)]
        permutations: Option<usize>,
    },
    /// Print a short text summary of an existing summary.json.
    Report {
        /// Output directory of an earlier run.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common, seed: Option<u64>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed_override(s);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run_and_report(cfg: &ExperimentConfig, out: &PathBuf, jobs: usize) -> Result<()> {
    let manifests = run_grid(cfg, jobs, Some(out))?;
    let failed = manifests.iter().filter(|m| !m.is_completed()).count();
    let report = aggregate(&manifests, &cfg.stats);
    write_report(out, &report)?;
    println!(
        "{} runs, {} failed; results in {}",
        manifests.len(),
        failed,
        out.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            jobs,
            seed_override,
        } => {
            let (cfg, out) = load(&common, seed_override)?;
            run_and_report(&cfg, &out, jobs)
        }
        Command::Ablate {
            common,
            jobs,
            seed_override,
            permutations,
        } => {
            let (mut cfg, out) = load(&common, seed_override)?;
            cfg.ablation.enabled = true;
            if let Some(p) = permutations {
                cfg.ablation.permutations = p;
            }
            run_and_report(&cfg, &out, jobs)
        }
        Command::Analyze { common } => {
            let (cfg, out) = load(&common, None)?;
            let manifests = load_manifests(&out.join(MANIFEST_DIR))?;
            let report = aggregate(&manifests, &cfg.stats);
            write_report(&out, &report)?;
            println!("{} manifests analysed; results in {}", manifests.len(), out.display());
            Ok(())
        }
        Command::Report { out } => {
            let report = load_report(&out.join("summary.json"))?;
            print_summary(&report);
            Ok(())
        }
    }
}

fn print_summary(report: &circuitlab::aggregate::Report) {
    println!("{} completed runs, {} failed", report.runs.len(), report.failed.len());
    println!("{:<10} {:<8} {:>12} {:>3} {:>10} {:>10}", "arch", "domain", "quantity", "n", "mean", "std");
    for s in &report.by_domain {
        println!(
            "{:<10} {:<8} {:>12} {:>3} {:>10.4} {:>10}",
            s.architecture.name(),
            s.domain.name(),
            s.quantity,
            s.n,
            s.mean,
            s.std.map(|v| format!("{v:.4}")).unwrap_or_default()
        );
    }
    let c = &report.ces_mse;
    match (c.r, c.p) {
        (Some(r), Some(p)) => println!("CES vs MSE: r = {r:.3}, p = {p:.3e}, n = {}", c.n),
        _ => println!("CES vs MSE: undefined"),
    }
    let sig = report.pairwise.iter().filter(|t| t.significant).count();
    println!("{sig} of {} pairwise tests significant after correction", report.pairwise.len());
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
