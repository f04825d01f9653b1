//! Batch execution: run (strategy × seed) grids from one config document
//! and emit bit-stable metrics files.
//!
//! Output layout under the manifest's output directory:
//!
//! * `metrics_<strategy>_seed<seed>.csv` — one row per round (round 0 is the
//!   initial evaluation);
//! * `diagnostics_<strategy>_seed<seed>.csv` — per-round, per-client drift
//!   and bias measurements (only with diagnostics enabled);
//! * `summary.json` — final losses and paired win counts across seeds.
//!
//! Reruns of the same manifest produce byte-identical files, so the
//! wall-clock column is emitted as zero; timings stay available on the
//! in-memory [`RoundMetrics`] records.

use crate::aggregation::AggregationStrategy;
use crate::config::{parse_config, problem_seed_pinned};
use crate::diagnostics::{run_with_diagnostics, DiagRow};
use crate::error::{Error, Result};
use crate::orchestrator::{run_experiment, ClientMode, ExperimentConfig, RoundMetrics};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

/// A batch of runs sharing one config document.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub strategies: Vec<AggregationStrategy>,
    pub diagnostics: bool,
    pub threads: Option<usize>,
}

/// Endpoint measurements of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
}

/// Final-loss win counts of one strategy over another across shared seeds.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyComparison {
    pub strategy_a: String,
    pub strategy_b: String,
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub runs: Vec<RunRecord>,
    pub comparisons: Vec<StrategyComparison>,
}

/// Print a float with 17 significant digits (round-trip exact for f64).
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Render the metrics CSV. The schema is fixed; the wall-time column is
/// zeroed to keep outputs byte-identical across reruns.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from(
        "round,global_loss,global_grad_norm_sq,trunc_bias_sq,mean_trunc_err_sq,weights_min,weights_max,wall_time_ms\n",
    );
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.round_t,
            format_sig17(m.global_loss),
            format_sig17(m.global_grad_norm_sq),
            format_sig17(m.trunc_bias_sq),
            format_sig17(m.mean_trunc_err_sq),
            format_sig17(m.weights_min),
            format_sig17(m.weights_max),
            format_sig17(0.0),
        )
        .expect("string write");
    }
    out
}

fn diagnostics_csv(rows: &[DiagRow]) -> String {
    let mut out = String::from(
        "round,client_id,rank,trunc_err_sq,gamma_k,gamma_bound_k,shadow_gap_sq,static_trunc_bias_sq\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round_t,
            r.client_id,
            r.rank,
            format_sig17(r.trunc_err_sq),
            format_sig17(r.gamma_k),
            format_sig17(r.gamma_bound_k),
            format_sig17(r.shadow_gap_sq),
            format_sig17(r.static_trunc_bias_sq),
        )
        .expect("string write");
    }
    out
}

fn one_run(
    base: &ExperimentConfig,
    pinned_problem_seed: bool,
    strategy: AggregationStrategy,
    seed: u64,
    diagnostics: bool,
) -> Result<(Vec<RoundMetrics>, Option<Vec<DiagRow>>)> {
    let mut cfg = base.clone();
    cfg.strategy = strategy;
    cfg.master_seed = seed;
    if !pinned_problem_seed {
        cfg.problem.master_seed = seed;
    }
    cfg.validate()?;
    if diagnostics {
        let (metrics, rows) = run_with_diagnostics(&cfg)?;
        Ok((metrics, Some(rows)))
    } else {
        Ok((run_experiment(&cfg)?, None))
    }
}

fn record_from(strategy: AggregationStrategy, seed: u64, metrics: &[RoundMetrics]) -> RunRecord {
    let last = metrics.last().expect("at least the round-0 record");
    RunRecord {
        strategy: strategy.name().to_string(),
        seed,
        rounds: metrics.len() - 1,
        final_loss: last.global_loss,
        final_grad_norm_sq: last.global_grad_norm_sq,
        min_grad_norm_sq: metrics
            .iter()
            .map(|m| m.global_grad_norm_sq)
            .fold(f64::INFINITY, f64::min),
    }
}

fn paired_comparisons(records: &[RunRecord], strategies: &[AggregationStrategy]) -> Vec<StrategyComparison> {
    let mut out = Vec::new();
    for (ai, &a) in strategies.iter().enumerate() {
        for &b in &strategies[ai + 1..] {
            let mut a_wins = 0;
            let mut b_wins = 0;
            let mut ties = 0;
            for ra in records.iter().filter(|r| r.strategy == a.name()) {
                if let Some(rb) = records
                    .iter()
                    .find(|r| r.strategy == b.name() && r.seed == ra.seed)
                {
                    if ra.final_loss < rb.final_loss {
                        a_wins += 1;
                    } else if rb.final_loss < ra.final_loss {
                        b_wins += 1;
                    } else {
                        ties += 1;
                    }
                }
            }
            out.push(StrategyComparison {
                strategy_a: a.name().to_string(),
                strategy_b: b.name().to_string(),
                a_wins,
                b_wins,
                ties,
            });
        }
    }
    out
}

fn check_manifest(manifest: &RunManifest, base: &ExperimentConfig) -> Result<()> {
    if manifest.seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    let mut seen_seeds = manifest.seeds.clone();
    seen_seeds.sort_unstable();
    seen_seeds.dedup();
    if seen_seeds.len() != manifest.seeds.len() {
        return Err(Error::InvalidConfig {
            field: "seeds".into(),
            message: "duplicate seeds would overwrite each other's outputs".into(),
        });
    }
    if manifest.strategies.is_empty() {
        return Err(Error::EmptyInput("strategies"));
    }
    let mut seen: Vec<&str> = manifest.strategies.iter().map(|s| s.name()).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != manifest.strategies.len() {
        return Err(Error::InvalidConfig {
            field: "strategies".into(),
            message: "duplicate strategies would overwrite each other's outputs".into(),
        });
    }
    if manifest.diagnostics && base.client_mode != ClientMode::WSpace {
        return Err(Error::InvalidConfig {
            field: "diagnostics".into(),
            message: "diagnostics need client_mode = w_space in the config".into(),
        });
    }
    Ok(())
}

/// Execute every (strategy, seed) run, write the output files, and return
/// the summary. Fails (nonzero exit at the CLI) on any divergence.
pub fn run_and_emit(manifest: &RunManifest) -> Result<RunSummary> {
    let text = std::fs::read_to_string(&manifest.config_path)?;
    let base = parse_config(&text)?;
    let pinned = problem_seed_pinned(&text)?;
    check_manifest(manifest, &base)?;
    std::fs::create_dir_all(&manifest.output_dir)?;

    let jobs: Vec<(AggregationStrategy, u64)> = manifest
        .strategies
        .iter()
        .flat_map(|&s| manifest.seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let execute = || -> Result<Vec<RunRecord>> {
        let results: Result<Vec<RunRecord>> = jobs
            .par_iter()
            .map(|&(strategy, seed)| {
                let (metrics, diag) =
                    one_run(&base, pinned, strategy, seed, manifest.diagnostics)?;
                let csv = metrics_csv(&metrics);
                let name = format!("metrics_{}_seed{}.csv", strategy.name(), seed);
                std::fs::write(manifest.output_dir.join(name), csv)?;
                if let Some(rows) = diag {
                    let name = format!("diagnostics_{}_seed{}.csv", strategy.name(), seed);
                    std::fs::write(manifest.output_dir.join(name), diagnostics_csv(&rows))?;
                }
                Ok(record_from(strategy, seed, &metrics))
            })
            .collect();
        results
    };

    let runs = match manifest.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig {
                field: "threads".into(),
                message: e.to_string(),
            })?
            .install(execute),
        None => execute(),
    }?;

    let summary = RunSummary {
        comparisons: paired_comparisons(&runs, &manifest.strategies),
        runs,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(manifest.output_dir.join("summary.json"), json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_formatting_round_trips() {
        for &x in &[0.05, 1.0 / 3.0, 1e-300, 123456.789, 0.0, -2.5e17] {
            let s = format_sig17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn csv_header_is_pinned() {
        let csv = metrics_csv(&[]);
        assert_eq!(
            csv,
            "round,global_loss,global_grad_norm_sq,trunc_bias_sq,mean_trunc_err_sq,weights_min,weights_max,wall_time_ms\n"
        );
    }
}
