//! Measurements of the quantities the convergence analysis reasons about:
//! per-step drift between full-rank and truncated-start trajectories, the
//! gap to the ideal full-rank aggregate, the static truncation-bias term,
//! and Monte-Carlo estimates of the noise/heterogeneity variances.
//!
//! All trajectory diagnostics require `client_mode = w_space`: the drift
//! recursion they check is about full-matrix SGD started from a truncated
//! model, not about factored adapter dynamics.

use crate::aggregation::AggregationStrategy;
use crate::client::shadow_train;
use crate::error::{Error, Result};
use crate::matrix::{frob_dist_sq, Matrix};
use crate::orchestrator::{execute_round, ClientMode, ExperimentConfig};
use crate::rng::{RngStreamKey, StreamDomain};
use crate::svd::truncate_to_rank;
use crate::task::{grad_w, stoch_grad_w, Problem};
use rayon::prelude::*;

/// Coupled drift trace of one client over one round.
#[derive(Debug, Clone)]
pub struct DriftTrace {
    pub client_id: usize,
    pub round_t: usize,
    /// `Γ_τ = ‖W_{t,τ} − W_{t,τ}^{r}‖_F²` for τ = 0..=K.
    pub gamma: Vec<f64>,
    /// Analytic bound `D₀^τ·r̂² + 8η²σ_l²·(D₀^τ − 1)/(D₀ − 1)`.
    pub gamma_bound: Vec<f64>,
    /// Growth factor `D₀ = 4(1 + L²η²)`.
    pub d0: f64,
    /// Squared truncation error `r̂²` the trace starts from.
    pub trunc_err_sq: f64,
}

fn require_w_space(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.client_mode != ClientMode::WSpace {
        return Err(Error::UnsupportedMode(
            "trajectory diagnostics need client_mode = w_space",
        ));
    }
    Ok(())
}

/// Analytic drift bound sequence for τ = 0..=K.
fn bound_sequence(k: usize, d0: f64, r_hat_sq: f64, eta: f64, sigma_l: f64) -> Vec<f64> {
    (0..=k)
        .map(|tau| {
            let growth = d0.powi(tau as i32);
            let noise = if tau == 0 {
                0.0
            } else {
                8.0 * eta * eta * sigma_l * sigma_l * (growth - 1.0) / (d0 - 1.0)
            };
            growth * r_hat_sq + noise
        })
        .collect()
}

fn drift_trace_with_key(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    client_id: usize,
    round_t: usize,
    key: RngStreamKey,
) -> Result<DriftTrace> {
    require_w_space(cfg)?;
    if client_id >= cfg.problem.n_clients {
        return Err(Error::InvalidConfig {
            field: "client_id".into(),
            message: format!("client {client_id} out of range"),
        });
    }
    let rank = cfg.ranks[client_id];
    let (_, approx, r_hat_sq) = truncate_to_rank(w_t, rank, rank as f64)?;
    let ds = &problem.datasets[client_id];
    let eta = cfg.effective_lr(problem.smoothness_l);
    let k = cfg.train.local_steps;
    let spec = cfg.problem.with_batch_size(cfg.train.batch_size);

    let mut full = w_t.clone();
    let mut truncated = approx;
    let mut gamma = Vec::with_capacity(k + 1);
    gamma.push(frob_dist_sq(&full, &truncated)?);
    for tau in 0..k {
        let step_key = key.with_step(tau as u64);
        // Identical stream key on both trajectories: common random numbers.
        let g_full = stoch_grad_w(&full, ds, &spec, step_key)?;
        let g_trunc = stoch_grad_w(&truncated, ds, &spec, step_key)?;
        full.axpy(-eta, &g_full);
        truncated.axpy(-eta, &g_trunc);
        if !full.is_finite() || !truncated.is_finite() {
            return Err(Error::Divergence {
                step: tau,
                round: Some(round_t),
                client: Some(client_id),
            });
        }
        gamma.push(frob_dist_sq(&full, &truncated)?);
    }

    let l = problem.smoothness_l;
    let d0 = 4.0 * (1.0 + l * l * eta * eta);
    let sigma_l = cfg.problem.grad_noise_sigma;
    let gamma_bound = bound_sequence(k, d0, r_hat_sq, eta, sigma_l);
    Ok(DriftTrace {
        client_id,
        round_t,
        gamma,
        gamma_bound,
        d0,
        trunc_err_sq: r_hat_sq,
    })
}

/// Trace the coupled drift of `client_id` at round `round_t`, using the same
/// noise streams the actual round consumes.
pub fn trace_drift(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    client_id: usize,
    round_t: usize,
) -> Result<DriftTrace> {
    let key = RngStreamKey::new(StreamDomain::Train, client_id as u64, round_t as u64);
    drift_trace_with_key(w_t, problem, cfg, client_id, round_t, key)
}

/// Monte-Carlo summary of the terminal drift `Γ_K` over noise replicas.
#[derive(Debug, Clone)]
pub struct DriftMcSummary {
    pub replicas: usize,
    pub mean_gamma_k: f64,
    pub std_err: f64,
    pub bound_k: f64,
}

/// Replicate the drift trace over fresh noise realisations and compare the
/// mean terminal drift against the analytic bound.
pub fn drift_bound_mc(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    client_id: usize,
    replicas: usize,
) -> Result<DriftMcSummary> {
    if replicas == 0 {
        return Err(Error::EmptyInput("replicas"));
    }
    let finals: Result<Vec<(f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let key = RngStreamKey::new(StreamDomain::DriftReplica, client_id as u64, rep as u64);
            let trace = drift_trace_with_key(w_t, problem, cfg, client_id, 0, key)?;
            Ok((
                *trace.gamma.last().unwrap(),
                *trace.gamma_bound.last().unwrap(),
            ))
        })
        .collect();
    let finals = finals?;
    let n = finals.len() as f64;
    let mean = finals.iter().map(|(g, _)| g).sum::<f64>() / n;
    let var = if finals.len() > 1 {
        finals
            .iter()
            .map(|(g, _)| (g - mean) * (g - mean))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let std_err = (var / n).sqrt();
    Ok(DriftMcSummary {
        replicas,
        mean_gamma_k: mean,
        std_err,
        bound_k: finals[0].1,
    })
}

/// Gap between a strategy's aggregate and the ideal full-rank aggregate.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub round_t: usize,
    /// `‖W_{t+1} − V_{t+1}‖_F²` where `V` aggregates full-rank trajectories
    /// run under the same noise streams and the same weights.
    pub shadow_gap_sq: f64,
    /// `‖Σ pᵢ (W_t^{r_i} − W_t)‖_F²`; identically zero for fedhl.
    pub static_trunc_bias_sq: f64,
    /// Factor-averaging noise; only meaningful for zero_padding runs.
    pub cross_noise: f64,
}

/// Execute round `round_t` from `w_t` and compare its aggregate against the
/// coupled full-rank reference trajectory.
pub fn shadow_gap(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    round_t: usize,
) -> Result<BiasReport> {
    require_w_space(cfg)?;
    let exec = execute_round(w_t, problem, cfg, round_t)?;
    let report = bias_report_for(w_t, problem, cfg, round_t, &exec)?;
    Ok(report)
}

pub(crate) fn bias_report_for(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    round_t: usize,
    exec: &crate::orchestrator::RoundExecution,
) -> Result<BiasReport> {
    let train_cfg = cfg.round_train_config(problem.smoothness_l);
    // Ideal reference: every client runs full-rank from W_t itself, with the
    // very same stream keys the actual round consumed.
    let shadows: Result<Vec<Matrix>> = exec
        .cohort
        .par_iter()
        .map(|&client| {
            let key = RngStreamKey::new(StreamDomain::Train, client as u64, round_t as u64);
            shadow_train(w_t, &problem.datasets[client], &train_cfg, &cfg.problem, key)
                .map_err(|e| e.with_round_context(round_t, client))
        })
        .collect();
    let shadows = shadows?;
    let mut v_next = Matrix::zeros(w_t.rows(), w_t.cols());
    for (s, &p) in shadows.iter().zip(exec.weights.as_slice()) {
        v_next.axpy(p, s);
    }
    let shadow_gap_sq = frob_dist_sq(&exec.new_global, &v_next)?;
    let cross_noise = match (&exec.factor_updates, cfg.strategy) {
        (Some(factors), AggregationStrategy::ZeroPadding) => {
            padded_cross_noise(factors, &exec.weights)?
        }
        _ => 0.0,
    };
    Ok(BiasReport {
        round_t,
        shadow_gap_sq,
        static_trunc_bias_sq: exec.static_bias_sq,
        cross_noise,
    })
}

fn padded_cross_noise(
    factors: &[crate::lora::LoraFactors],
    weights: &crate::aggregation::WeightVector,
) -> Result<f64> {
    let r_max = factors.iter().map(|f| f.rank()).max().unwrap_or(1);
    let padded: Result<Vec<crate::lora::LoraFactors>> = factors
        .iter()
        .map(|f| {
            let (b, a) = crate::aggregation::padded_parts(f, r_max)?;
            crate::lora::LoraFactors::new(b, a, r_max as f64)
        })
        .collect();
    crate::aggregation::cross_term_noise(&padded?, weights)
}

/// Monte-Carlo estimates of the gradient-noise and heterogeneity variances.
#[derive(Debug, Clone)]
pub struct SigmaEstimates {
    /// Max over probes and clients of the estimated `E‖g̃ − ∇fᵢ‖²`.
    pub sigma_l_sq_hat: f64,
    /// Standard error of the estimate behind `sigma_l_sq_hat`.
    pub sigma_l_se: f64,
    /// Max over probes and clients of `‖∇f − ∇fᵢ‖²` (exact, no MC error).
    pub sigma_g_sq_hat: f64,
}

/// Estimate the variance knobs by direct measurement at the probe points.
pub fn estimate_sigmas(
    problem: &Problem,
    w_probes: &[Matrix],
    draws: usize,
) -> Result<SigmaEstimates> {
    if w_probes.is_empty() {
        return Err(Error::EmptyInput("probe points"));
    }
    if draws < 100 {
        return Err(Error::InvalidConfig {
            field: "draws".into(),
            message: format!("need at least 100 Monte-Carlo draws, got {draws}"),
        });
    }
    let spec = &problem.spec;
    let mut sigma_l_sq_hat = 0.0;
    let mut sigma_l_se = 0.0;
    let mut sigma_g_sq_hat: f64 = 0.0;
    for (probe_idx, w) in w_probes.iter().enumerate() {
        let global = crate::task::global_grad(problem, w)?;
        for (client, ds) in problem.datasets.iter().enumerate() {
            let exact = grad_w(w, ds)?;
            sigma_g_sq_hat = sigma_g_sq_hat.max(frob_dist_sq(&global, &exact)?);

            let sq_devs: Result<Vec<f64>> = (0..draws)
                .into_par_iter()
                .map(|draw| {
                    let key = RngStreamKey::new(
                        StreamDomain::SigmaEstimate,
                        client as u64,
                        probe_idx as u64,
                    )
                    .with_step(draw as u64);
                    let g = stoch_grad_w(w, ds, spec, key)?;
                    frob_dist_sq(&g, &exact)
                })
                .collect();
            let sq_devs = sq_devs?;
            let n = sq_devs.len() as f64;
            let mean = sq_devs.iter().sum::<f64>() / n;
            let var = sq_devs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            if mean > sigma_l_sq_hat {
                sigma_l_sq_hat = mean;
                sigma_l_se = se;
            }
        }
    }
    Ok(SigmaEstimates {
        sigma_l_sq_hat,
        sigma_l_se,
        sigma_g_sq_hat,
    })
}

/// One row of the diagnostics CSV.
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub round_t: usize,
    pub client_id: usize,
    pub rank: usize,
    pub trunc_err_sq: f64,
    pub gamma_k: f64,
    pub gamma_bound_k: f64,
    pub shadow_gap_sq: f64,
    pub static_trunc_bias_sq: f64,
}

/// Run a full experiment while recording per-round bias reports and
/// per-client drift traces. Requires `client_mode = w_space`.
pub fn run_with_diagnostics(
    cfg: &ExperimentConfig,
) -> Result<(Vec<crate::orchestrator::RoundMetrics>, Vec<DiagRow>)> {
    cfg.validate()?;
    require_w_space(cfg)?;
    let problem = crate::task::generate_problem(&cfg.problem)?;
    let mut state = crate::orchestrator::initial_state(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.rounds + 1);
    metrics.push(crate::orchestrator::round_zero_metrics(&problem, &state.w)?);
    let mut rows = Vec::new();
    for _ in 0..cfg.rounds {
        let round_t = state.round_t;
        let exec = execute_round(&state.w, &problem, cfg, round_t)?;
        let report = bias_report_for(&state.w, &problem, cfg, round_t, &exec)?;
        for &client in &exec.cohort {
            let trace = trace_drift(&state.w, &problem, cfg, client, round_t)?;
            rows.push(DiagRow {
                round_t,
                client_id: client,
                rank: cfg.ranks[client],
                trunc_err_sq: trace.trunc_err_sq,
                gamma_k: *trace.gamma.last().unwrap(),
                gamma_bound_k: *trace.gamma_bound.last().unwrap(),
                shadow_gap_sq: report.shadow_gap_sq,
                static_trunc_bias_sq: report.static_trunc_bias_sq,
            });
        }
        let (next, round_metrics) = crate::orchestrator::run_round(&state, &problem, cfg)?;
        state = next;
        metrics.push(round_metrics);
    }
    Ok((metrics, rows))
}
