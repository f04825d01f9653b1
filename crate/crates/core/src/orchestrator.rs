//! The federated round loop: rank redistribution via one SVD per round,
//! client dispatch with optional partial participation, weight computation,
//! aggregation and metric recording.

use crate::aggregation::{
    aggregate_fedhl, aggregate_joint, aggregate_truncated_baseline, aggregate_zero_padding,
    fedavg_weights, fedhl_weights, softmax_smooth, uniform_weights, AggregationStrategy,
    WeightPolicy, WeightPolicyKind, WeightVector,
};
use crate::client::{local_train, shadow_train, LocalTrainConfig};
use crate::error::{Error, Result};
use crate::lora::LoraFactors;
use crate::matrix::{frob_dist_sq, Matrix};
use crate::rng::{normal_matrix, stream_rng, RngStreamKey, StreamDomain};
use crate::svd::{factors_from_svd, svd};
use crate::task::{
    generate_problem, global_grad, global_loss, per_client_losses, Problem, ProblemSpec,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;

/// Whether clients update adapter factors or the weight matrix directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// SGD on `(B, A)`; what adapter training does in practice.
    Factored,
    /// Full-matrix SGD from the truncated model; matches the update rule
    /// the drift diagnostics reason about.
    WSpace,
}

/// Learning-rate schedule across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Use `train.learning_rate` in every round.
    Constant,
    /// `η = 1 / (L·K·√T)` from the measured smoothness constant.
    InverseSqrtT,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub train: LocalTrainConfig,
    pub rounds: usize,
    /// Adapter rank per client, length `n_clients`.
    pub ranks: Vec<usize>,
    pub strategy: AggregationStrategy,
    /// `None` selects the canonical policy for the strategy: optimal
    /// weights for `fedhl`, sample-proportional weights otherwise.
    pub weight_policy: Option<WeightPolicy>,
    pub participation_rate: f64,
    pub init_scale: f64,
    pub client_mode: ClientMode,
    pub lr_schedule: LrSchedule,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.train.validate()?;
        let field = |f: &str, msg: String| Error::InvalidConfig {
            field: f.into(),
            message: msg,
        };
        if self.rounds == 0 {
            return Err(field("rounds", "must be ≥ 1".into()));
        }
        if self.ranks.len() != self.problem.n_clients {
            return Err(field(
                "ranks",
                format!(
                    "expected {} entries (one per client), got {}",
                    self.problem.n_clients,
                    self.ranks.len()
                ),
            ));
        }
        let max_rank = self.problem.d.min(self.problem.k);
        for (i, &r) in self.ranks.iter().enumerate() {
            if r == 0 || r > max_rank {
                return Err(field(
                    "ranks",
                    format!("ranks[{i}] = {r} outside 1..={max_rank}"),
                ));
            }
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return Err(field(
                "participation_rate",
                format!("must lie in (0, 1], got {}", self.participation_rate),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(field("init_scale", "must be ≥ 0".into()));
        }
        if self.init_scale == 0.0 && self.client_mode == ClientMode::Factored {
            return Err(field(
                "init_scale",
                "zero init creates dead factors in factored mode; use w_space or a positive scale"
                    .into(),
            ));
        }
        if self.strategy == AggregationStrategy::ZeroPadding
            && self.client_mode == ClientMode::WSpace
        {
            return Err(field(
                "strategy",
                "zero_padding averages adapter factors and needs client_mode = factored".into(),
            ));
        }
        if self.lr_schedule == LrSchedule::InverseSqrtT && self.train.local_steps == 0 {
            return Err(field(
                "lr_schedule",
                "the inverse_sqrt_t schedule needs local_steps ≥ 1".into(),
            ));
        }
        if let Some(policy) = &self.weight_policy {
            policy.validate()?;
        }
        Ok(())
    }

    /// Resolve the weight policy, defaulting per strategy.
    pub fn effective_policy(&self) -> WeightPolicy {
        self.weight_policy.clone().unwrap_or_else(|| {
            if self.strategy == AggregationStrategy::Fedhl {
                WeightPolicy::fedhl_optimal()
            } else {
                WeightPolicy::fedavg()
            }
        })
    }

    /// Per-round learning rate under the configured schedule.
    pub fn effective_lr(&self, smoothness_l: f64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.train.learning_rate,
            LrSchedule::InverseSqrtT => {
                1.0 / (smoothness_l * self.train.local_steps as f64 * (self.rounds as f64).sqrt())
            }
        }
    }

    pub(crate) fn round_train_config(&self, smoothness_l: f64) -> LocalTrainConfig {
        LocalTrainConfig {
            learning_rate: self.effective_lr(smoothness_l),
            ..self.train
        }
    }
}

/// State carried between rounds. The truncation errors and weights are the
/// ones recorded while producing the current `w` (empty before round 0).
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round_t: usize,
    pub w: Matrix,
    pub participating: Vec<usize>,
    pub trunc_err_sq: Vec<f64>,
    pub weights_used: Option<WeightVector>,
}

/// Per-round record; one row of the metrics CSV.
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub round_t: usize,
    pub global_loss: f64,
    pub global_grad_norm_sq: f64,
    pub per_client_losses: Vec<f64>,
    /// `‖Σ pᵢ (W_t^{r_i} − W_t)‖_F²` of the aggregation that produced this
    /// model; identically zero for the fedhl rule.
    pub trunc_bias_sq: f64,
    pub mean_trunc_err_sq: f64,
    pub weights_min: f64,
    pub weights_max: f64,
    pub wall_time_ms: f64,
}

/// Seeded Gaussian initialisation of the global model.
pub fn init_global(cfg: &ExperimentConfig) -> Result<Matrix> {
    cfg.validate()?;
    let (d, k) = (cfg.problem.d, cfg.problem.k);
    if cfg.init_scale == 0.0 {
        return Ok(Matrix::zeros(d, k));
    }
    let mut rng = stream_rng(cfg.master_seed, RngStreamKey::new(StreamDomain::Init, 0, 0));
    Ok(normal_matrix(&mut rng, d, k).scale(cfg.init_scale))
}

/// Fresh state before any round has run.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<RoundState> {
    Ok(RoundState {
        round_t: 0,
        w: init_global(cfg)?,
        participating: Vec::new(),
        trunc_err_sq: Vec::new(),
        weights_used: None,
    })
}

/// Intermediates of one executed round, shared with the diagnostics.
pub(crate) struct RoundExecution {
    pub cohort: Vec<usize>,
    pub trunc_err_sq: Vec<f64>,
    pub factor_updates: Option<Vec<LoraFactors>>,
    pub weights: WeightVector,
    pub new_global: Matrix,
    pub static_bias_sq: f64,
}

/// Sample `⌈rate·N⌉` distinct clients for a round, seeded by the round index.
pub(crate) fn sample_cohort(
    n_clients: usize,
    rate: f64,
    master_seed: u64,
    round_t: usize,
) -> Vec<usize> {
    let want = ((rate * n_clients as f64).ceil() as usize).clamp(1, n_clients);
    if want == n_clients {
        return (0..n_clients).collect();
    }
    let mut rng = stream_rng(
        master_seed,
        RngStreamKey::new(StreamDomain::Cohort, 0, round_t as u64),
    );
    let mut ids: Vec<usize> = (0..n_clients).collect();
    for i in 0..want {
        let j = rng.random_range(i..n_clients);
        ids.swap(i, j);
    }
    let mut cohort = ids[..want].to_vec();
    cohort.sort_unstable();
    cohort
}

pub(crate) fn execute_round(
    w_t: &Matrix,
    problem: &Problem,
    cfg: &ExperimentConfig,
    round_t: usize,
) -> Result<RoundExecution> {
    let cohort = sample_cohort(
        cfg.problem.n_clients,
        cfg.participation_rate,
        cfg.master_seed,
        round_t,
    );

    // One SVD of W_t serves every rank in the round.
    let triple = svd(w_t)?;
    let mut by_rank: HashMap<usize, (LoraFactors, Matrix, f64)> = HashMap::new();
    for &i in &cohort {
        let r = cfg.ranks[i];
        if let std::collections::hash_map::Entry::Vacant(slot) = by_rank.entry(r) {
            let (factors, approx) = factors_from_svd(&triple, r, r as f64)?;
            let err = frob_dist_sq(w_t, &approx)?;
            slot.insert((factors, approx, err));
        }
    }

    let mut truncations = Vec::with_capacity(cohort.len());
    let mut trunc_err_sq = Vec::with_capacity(cohort.len());
    let mut init_factors = Vec::with_capacity(cohort.len());
    for &i in &cohort {
        let (factors, approx, err) = &by_rank[&cfg.ranks[i]];
        truncations.push(approx.clone());
        trunc_err_sq.push(*err);
        init_factors.push(factors.clone());
    }

    let train_cfg = cfg.round_train_config(problem.smoothness_l);
    let results: Result<Vec<(Matrix, Option<LoraFactors>)>> = cohort
        .par_iter()
        .enumerate()
        .map(|(slot, &client)| {
            let key = RngStreamKey::new(StreamDomain::Train, client as u64, round_t as u64);
            let ds = &problem.datasets[client];
            match cfg.client_mode {
                ClientMode::Factored => {
                    let upd = local_train(&init_factors[slot], ds, &train_cfg, &cfg.problem, key)
                        .map_err(|e| e.with_round_context(round_t, client))?;
                    Ok((upd.reconstructed, Some(upd.factors_after)))
                }
                ClientMode::WSpace => {
                    let w = shadow_train(&truncations[slot], ds, &train_cfg, &cfg.problem, key)
                        .map_err(|e| e.with_round_context(round_t, client))?;
                    Ok((w, None))
                }
            }
        })
        .collect();
    let results = results?;
    let updates: Vec<Matrix> = results.iter().map(|(w, _)| w.clone()).collect();
    let factor_updates: Option<Vec<LoraFactors>> = if cfg.client_mode == ClientMode::Factored {
        Some(results.into_iter().map(|(_, f)| f.unwrap()).collect())
    } else {
        None
    };

    let weights = compute_weights(cfg, problem, &cohort, &trunc_err_sq)?;

    let new_global = match cfg.strategy {
        AggregationStrategy::Joint => aggregate_joint(&updates, &weights)?,
        AggregationStrategy::TruncatedBaseline => {
            let deltas: Vec<Matrix> = updates
                .iter()
                .zip(&truncations)
                .map(|(u, t)| u.sub(t))
                .collect();
            aggregate_truncated_baseline(&truncations, &deltas, &weights)?
        }
        AggregationStrategy::Fedhl => aggregate_fedhl(w_t, &updates, &truncations, &weights)?,
        AggregationStrategy::ZeroPadding => {
            let factors = factor_updates
                .as_ref()
                .expect("validated: zero_padding implies factored mode");
            let r_max = cohort.iter().map(|&i| cfg.ranks[i]).max().unwrap();
            aggregate_zero_padding(factors, &weights, r_max)?
        }
    };
    new_global.check_finite("aggregated global model")?;

    let static_bias_sq = if cfg.strategy == AggregationStrategy::Fedhl {
        // The anchor is W_t itself: Σ pᵢ (W_t − W_t) = 0 identically.
        0.0
    } else {
        let mut bias = Matrix::zeros(w_t.rows(), w_t.cols());
        for (trunc, &p) in truncations.iter().zip(weights.as_slice()) {
            bias.axpy(p, &trunc.sub(w_t));
        }
        bias.frob_norm_sq()
    };

    Ok(RoundExecution {
        cohort,
        trunc_err_sq,
        factor_updates,
        weights,
        new_global,
        static_bias_sq,
    })
}

fn compute_weights(
    cfg: &ExperimentConfig,
    problem: &Problem,
    cohort: &[usize],
    trunc_err_sq: &[f64],
) -> Result<WeightVector> {
    let policy = cfg.effective_policy();
    let cohort_samples: Vec<usize> = cohort
        .iter()
        .map(|&i| problem.datasets[i].num_samples())
        .collect();
    match policy.kind {
        WeightPolicyKind::FedavgProportional => fedavg_weights(&cohort_samples),
        WeightPolicyKind::Uniform => uniform_weights(cohort.len()),
        WeightPolicyKind::FedhlOptimal => {
            let errs: Vec<f64> = if policy.fourth_power {
                trunc_err_sq.iter().map(|&e| e * e).collect()
            } else {
                trunc_err_sq.to_vec()
            };
            let mut w = fedhl_weights(&errs, policy.epsilon)?;
            if policy.hybrid_sample_counts {
                let masses: Vec<f64> = w
                    .as_slice()
                    .iter()
                    .zip(&cohort_samples)
                    .map(|(&p, &m)| p * m as f64)
                    .collect();
                w = WeightVector::from_masses(masses)?;
            }
            if let Some(temperature) = policy.softmax_temperature {
                w = softmax_smooth(&w, temperature)?;
            }
            Ok(w)
        }
    }
}

/// Execute round `state.round_t`, returning the next state and the metric
/// record for the freshly aggregated model.
pub fn run_round(
    state: &RoundState,
    problem: &Problem,
    cfg: &ExperimentConfig,
) -> Result<(RoundState, RoundMetrics)> {
    let started = Instant::now();
    let exec = execute_round(&state.w, problem, cfg, state.round_t)?;
    let metrics = RoundMetrics {
        round_t: state.round_t + 1,
        global_loss: global_loss(problem, &exec.new_global)?,
        global_grad_norm_sq: global_grad(problem, &exec.new_global)?.frob_norm_sq(),
        per_client_losses: per_client_losses(problem, &exec.new_global)?,
        trunc_bias_sq: exec.static_bias_sq,
        mean_trunc_err_sq: exec.trunc_err_sq.iter().sum::<f64>()
            / exec.trunc_err_sq.len() as f64,
        weights_min: exec.weights.min(),
        weights_max: exec.weights.max(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let next = RoundState {
        round_t: state.round_t + 1,
        w: exec.new_global,
        participating: exec.cohort,
        trunc_err_sq: exec.trunc_err_sq,
        weights_used: Some(exec.weights),
    };
    Ok((next, metrics))
}

/// Metric record for the initial model, before any training.
pub fn round_zero_metrics(problem: &Problem, w0: &Matrix) -> Result<RoundMetrics> {
    let started = Instant::now();
    Ok(RoundMetrics {
        round_t: 0,
        global_loss: global_loss(problem, w0)?,
        global_grad_norm_sq: global_grad(problem, w0)?.frob_norm_sq(),
        per_client_losses: per_client_losses(problem, w0)?,
        trunc_bias_sq: 0.0,
        mean_trunc_err_sq: 0.0,
        weights_min: 0.0,
        weights_max: 0.0,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Run `cfg.rounds` rounds on a pre-generated problem. The returned series
/// has `rounds + 1` entries; entry 0 evaluates the initial model.
pub fn run_experiment_on(problem: &Problem, cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    cfg.validate()?;
    let mut state = initial_state(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.rounds + 1);
    metrics.push(round_zero_metrics(problem, &state.w)?);
    for _ in 0..cfg.rounds {
        let (next, round_metrics) = run_round(&state, problem, cfg)?;
        state = next;
        metrics.push(round_metrics);
    }
    Ok(metrics)
}

/// Generate the problem from `cfg.problem` and run the full experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    cfg.validate()?;
    let problem = generate_problem(&cfg.problem)?;
    run_experiment_on(&problem, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{grad_w, NoiseMode};

    pub(crate) fn test_config(
        d: usize,
        k: usize,
        n: usize,
        ranks: Vec<usize>,
        strategy: AggregationStrategy,
    ) -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec {
                d,
                k,
                target_rank: d.min(k).div_euclid(2).max(1),
                n_clients: n,
                samples_per_client: vec![2 * d; n],
                hetero_sigma: 0.1,
                grad_noise_sigma: 0.0,
                noise_mode: NoiseMode::Additive,
                batch_size: 1,
                shared_design: false,
                master_seed: 11,
            },
            train: LocalTrainConfig {
                local_steps: 3,
                learning_rate: 0.05,
                batch_size: 1,
                weight_decay: 0.0,
            },
            rounds: 5,
            ranks,
            strategy,
            weight_policy: None,
            participation_rate: 1.0,
            init_scale: 0.01,
            client_mode: ClientMode::Factored,
            lr_schedule: LrSchedule::Constant,
            master_seed: 11,
        }
    }

    #[test]
    fn init_global_is_seeded_and_scaled() {
        let cfg = test_config(8, 8, 2, vec![8, 4], AggregationStrategy::Fedhl);
        let a = init_global(&cfg).unwrap();
        let b = init_global(&cfg).unwrap();
        assert_eq!(a, b);
        // ‖W₀‖_F concentrates near init_scale·√(dk).
        let norm = a.frob_norm();
        let expect = 0.01 * 8.0;
        assert!(norm > 0.5 * expect && norm < 1.5 * expect, "norm {norm}");
    }

    #[test]
    fn zero_init_scale_rules() {
        let mut cfg = test_config(4, 4, 1, vec![4], AggregationStrategy::Joint);
        cfg.init_scale = 0.0;
        assert!(init_global(&cfg).is_err());
        cfg.client_mode = ClientMode::WSpace;
        assert_eq!(init_global(&cfg).unwrap(), Matrix::zeros(4, 4));
    }

    #[test]
    fn validation_names_offending_field() {
        let mut cfg = test_config(4, 4, 2, vec![4], AggregationStrategy::Joint);
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "ranks"),
            other => panic!("expected ranks error, got {other:?}"),
        }
        cfg.ranks = vec![4, 9];
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "ranks"),
            other => panic!("expected ranks error, got {other:?}"),
        }
    }

    #[test]
    fn single_full_rank_client_round_is_plain_sgd() {
        // N=1, full rank, zero noise, joint strategy, w_space clients:
        // one round must match K hand-traced gradient steps.
        let mut cfg = test_config(6, 4, 1, vec![4], AggregationStrategy::Joint);
        cfg.client_mode = ClientMode::WSpace;
        cfg.problem.hetero_sigma = 0.0;
        let problem = generate_problem(&cfg.problem).unwrap();
        let state = initial_state(&cfg).unwrap();
        let (next, _) = run_round(&state, &problem, &cfg).unwrap();

        let mut w = state.w.clone();
        for _ in 0..cfg.train.local_steps {
            let g = grad_w(&w, &problem.datasets[0]).unwrap();
            w.axpy(-cfg.train.learning_rate, &g);
        }
        let gap = frob_dist_sq(&next.w, &w).unwrap().sqrt();
        assert!(gap < 1e-10, "gap {gap}");
    }

    #[test]
    fn full_rank_fedhl_matches_truncated_baseline() {
        let mk = |strategy| {
            let mut cfg = test_config(6, 6, 3, vec![6, 6, 6], strategy);
            cfg.problem.grad_noise_sigma = 0.05;
            cfg.rounds = 4;
            cfg
        };
        let a = run_experiment(&mk(AggregationStrategy::Fedhl)).unwrap();
        let b = run_experiment(&mk(AggregationStrategy::TruncatedBaseline)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!(
                (ra.global_loss - rb.global_loss).abs() < 1e-10,
                "round {}: {} vs {}",
                ra.round_t,
                ra.global_loss,
                rb.global_loss
            );
        }
    }

    #[test]
    fn metric_series_is_deterministic() {
        let mut cfg = test_config(6, 5, 4, vec![5, 4, 3, 2], AggregationStrategy::Fedhl);
        cfg.problem.grad_noise_sigma = 0.1;
        cfg.participation_rate = 0.5;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.len(), cfg.rounds + 1);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.global_loss.to_bits(), rb.global_loss.to_bits());
            assert_eq!(
                ra.global_grad_norm_sq.to_bits(),
                rb.global_grad_norm_sq.to_bits()
            );
            assert_eq!(ra.trunc_bias_sq.to_bits(), rb.trunc_bias_sq.to_bits());
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = test_config(6, 5, 6, vec![5, 4, 3, 3, 2, 2], AggregationStrategy::Fedhl);
        cfg.problem.grad_noise_sigma = 0.1;
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap());
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap());
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.global_loss.to_bits(), b.global_loss.to_bits());
        }
    }

    #[test]
    fn deterministic_descent_with_full_ranks() {
        let mut cfg = test_config(8, 8, 3, vec![8, 8, 8], AggregationStrategy::Joint);
        cfg.problem.hetero_sigma = 0.0;
        cfg.problem.grad_noise_sigma = 0.0;
        cfg.client_mode = ClientMode::WSpace;
        cfg.rounds = 10;
        let problem = generate_problem(&cfg.problem).unwrap();
        cfg.train.learning_rate = 1.0 / problem.smoothness_l;
        let metrics = run_experiment_on(&problem, &cfg).unwrap();
        for pair in metrics.windows(2) {
            assert!(
                pair[1].global_loss <= pair[0].global_loss + 1e-12,
                "loss rose at round {}",
                pair[1].round_t
            );
        }
    }

    #[test]
    fn experiment_length_and_round_zero() {
        let mut cfg = test_config(4, 4, 2, vec![4, 2], AggregationStrategy::Fedhl);
        cfg.rounds = 1;
        let metrics = run_experiment(&cfg).unwrap();
        assert_eq!(metrics.len(), 2);
        assert_eq!(metrics[0].round_t, 0);
        assert_eq!(metrics[0].trunc_bias_sq, 0.0);
    }

    #[test]
    fn cohort_sampling_is_seeded_and_sized() {
        let a = sample_cohort(10, 0.3, 5, 2);
        let b = sample_cohort(10, 0.3, 5, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let c = sample_cohort(10, 0.3, 5, 3);
        assert!(a != c || sample_cohort(10, 0.3, 5, 4) != a);
        assert_eq!(sample_cohort(7, 1.0, 5, 0), vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn fedhl_weights_recorded_unsmoothed_match_formula() {
        let mut cfg = test_config(8, 6, 3, vec![6, 4, 2], AggregationStrategy::Fedhl);
        cfg.weight_policy = Some(WeightPolicy {
            softmax_temperature: None,
            ..WeightPolicy::fedhl_optimal()
        });
        let problem = generate_problem(&cfg.problem).unwrap();
        let state = initial_state(&cfg).unwrap();
        let (next, _) = run_round(&state, &problem, &cfg).unwrap();
        let expect = fedhl_weights(&next.trunc_err_sq, 1e-8).unwrap();
        let got = next.weights_used.unwrap();
        for (a, b) in got.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fourth_power_and_hybrid_policy_variants() {
        let base = test_config(8, 6, 3, vec![6, 4, 2], AggregationStrategy::Fedhl);
        let with_policy = |policy: WeightPolicy| {
            let mut cfg = base.clone();
            cfg.problem.samples_per_client = vec![4, 8, 12];
            cfg.weight_policy = Some(policy);
            let problem = generate_problem(&cfg.problem).unwrap();
            let state = initial_state(&cfg).unwrap();
            let (next, _) = run_round(&state, &problem, &cfg).unwrap();
            (next.trunc_err_sq, next.weights_used.unwrap())
        };

        let plain = WeightPolicy {
            softmax_temperature: None,
            ..WeightPolicy::fedhl_optimal()
        };
        let (errs, _) = with_policy(plain.clone());

        let (_, quartic) = with_policy(WeightPolicy {
            fourth_power: true,
            ..plain.clone()
        });
        let powered: Vec<f64> = errs.iter().map(|&e| e * e).collect();
        let expect = fedhl_weights(&powered, 1e-8).unwrap();
        for (a, b) in quartic.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let (_, hybrid) = with_policy(WeightPolicy {
            hybrid_sample_counts: true,
            ..plain
        });
        let eq15 = fedhl_weights(&errs, 1e-8).unwrap();
        let masses: Vec<f64> = eq15
            .as_slice()
            .iter()
            .zip([4.0, 8.0, 12.0])
            .map(|(&p, m)| p * m)
            .collect();
        let expect = WeightVector::from_masses(masses).unwrap();
        for (a, b) in hybrid.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
