//! `rcm`: build and verify small-noise expansions of random center
//! manifolds from a single configuration file.
//!
//! Exit codes: 0 success, 1 scientific check failure, 2 configuration error.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CheckFailure;

#[derive(Parser)]
#[command(
    name = "rcm",
    about = "Small-noise expansion of random center manifolds: build, verify, reproduce"
)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, default_value = "rcm.toml")]
    config: PathBuf,

    /// Output directory for data files and manifests.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for the parallel map over (seed, eps, xi) tasks
    /// (default: RCM_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Offset added to every seed in the configuration.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the exponential estimates, the gap condition, and estimate
    /// Lyapunov exponents across seeds.
    Trichotomy,
    /// Build per-seed expansion tables (`xi Hd H1 H2`).
    Expand,
    /// Solve the full manifold fixed point across the (seed, eps, xi) grid.
    Oracle,
    /// Oracle-vs-expansion error sweep with fitted convergence slopes.
    OrderStudy,
    /// Invariance defects of the oracle and expansion graphs.
    Invariance,
    /// Emit the deterministic and eps-corrected manifold curves.
    Figure1,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", cli.config.display()))?;
    let mut cfg = config::load(&text, cli.seed_offset)?;
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    let workers = cfg
        .workers
        .or_else(|| {
            std::env::var("RCM_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    fs::create_dir_all(&cli.out)
        .map_err(|e| anyhow::anyhow!("cannot create output dir {}: {e}", cli.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    pool.install(|| match cli.command {
        Command::Trichotomy => commands::cmd_trichotomy(&cfg, &cli.out),
        Command::Expand => commands::cmd_expand(&cfg, &cli.out),
        Command::Oracle => commands::cmd_oracle(&cfg, &cli.out),
        Command::OrderStudy => commands::cmd_order_study(&cfg, &cli.out),
        Command::Invariance => commands::cmd_invariance(&cfg, &cli.out),
        Command::Figure1 => commands::cmd_figure1(&cfg, &cli.out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let scientific = err.downcast_ref::<CheckFailure>().is_some()
                || err.downcast_ref::<rcm_core::Error>().map_or(false, |e| {
                    matches!(
                        e,
                        rcm_core::Error::Divergence { .. } | rcm_core::Error::Instability { .. }
                    )
                });
            if scientific {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
