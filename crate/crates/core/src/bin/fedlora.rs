//! Batch experiment runner.
//!
//! Runs every (strategy, seed) combination from one config document and
//! writes per-run metrics CSVs plus a summary JSON. Exits nonzero if any
//! run fails (e.g. a divergence during local training).

use clap::{Parser, ValueEnum};
use fedlora_core::aggregation::AggregationStrategy;
use fedlora_core::config::parse_config;
use fedlora_core::runner::{run_and_emit, RunManifest};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "fedlora",
    about = "Federated heterogeneous-LoRA simulator",
    version
)]
struct Cli {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Output directory for CSV/JSON files (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Comma-separated experiment seeds; defaults to the config's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,

    /// Comma-separated strategies to compare; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,

    /// Emit per-round drift/bias diagnostics (needs client_mode = w_space).
    #[arg(long, default_value = "off")]
    diagnostics: OnOff,

    /// Worker threads for client fan-out and parallel runs.
    #[arg(long, env = "FEDLORA_THREADS")]
    threads: Option<usize>,
}

fn build_manifest(cli: &Cli) -> fedlora_core::Result<RunManifest> {
    let text = std::fs::read_to_string(&cli.config)?;
    let base = parse_config(&text)?;
    let seeds = if cli.seeds.is_empty() {
        vec![base.master_seed]
    } else {
        cli.seeds.clone()
    };
    let strategies = if cli.strategies.is_empty() {
        vec![base.strategy]
    } else {
        cli.strategies
            .iter()
            .map(|s| AggregationStrategy::parse(s))
            .collect::<fedlora_core::Result<Vec<_>>>()?
    };
    Ok(RunManifest {
        config_path: cli.config.clone(),
        output_dir: cli.out.clone(),
        seeds,
        strategies,
        diagnostics: cli.diagnostics == OnOff::On,
        threads: cli.threads,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let manifest = match build_manifest(&cli) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("fedlora: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run_and_emit(&manifest) {
        Ok(summary) => {
            for r in &summary.runs {
                println!(
                    "{} seed={} final_loss={:.6e} final_grad_norm_sq={:.6e}",
                    r.strategy, r.seed, r.final_loss, r.final_grad_norm_sq
                );
            }
            for c in &summary.comparisons {
                println!(
                    "{} vs {}: {}-{} ({} ties) on final loss",
                    c.strategy_a, c.strategy_b, c.a_wins, c.b_wins, c.ties
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fedlora: {e}");
            ExitCode::FAILURE
        }
    }
}
