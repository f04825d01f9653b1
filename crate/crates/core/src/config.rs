//! Experiment configuration documents.
//!
//! Configs are JSON. A minimal document needs the problem dimensions and
//! client count, the rank list and the round count; everything else has a
//! documented default. Unknown keys are rejected.

use crate::aggregation::{AggregationStrategy, WeightPolicy};
use crate::client::LocalTrainConfig;
use crate::error::Result;
use crate::orchestrator::{ClientMode, ExperimentConfig, LrSchedule};
use crate::task::{NoiseMode, ProblemSpec};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    d: usize,
    k: usize,
    n_clients: usize,
    target_rank: Option<usize>,
    samples_per_client: Option<Vec<usize>>,
    hetero_sigma: Option<f64>,
    grad_noise_sigma: Option<f64>,
    noise_mode: Option<NoiseMode>,
    batch_size: Option<usize>,
    shared_design: Option<bool>,
    master_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainDoc {
    local_steps: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    weight_decay: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    problem: ProblemDoc,
    #[serde(default)]
    train: TrainDoc,
    rounds: usize,
    ranks: Vec<usize>,
    strategy: Option<AggregationStrategy>,
    weight_policy: Option<WeightPolicy>,
    participation_rate: Option<f64>,
    init_scale: Option<f64>,
    client_mode: Option<ClientMode>,
    lr_schedule: Option<LrSchedule>,
    master_seed: Option<u64>,
}

/// Parse and validate a JSON config document, applying defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: ConfigDoc = serde_json::from_str(text)?;
    let master_seed = doc.master_seed.unwrap_or(1);
    let d = doc.problem.d;
    let k = doc.problem.k;
    let n = doc.problem.n_clients;
    let problem = ProblemSpec {
        d,
        k,
        target_rank: doc
            .problem
            .target_rank
            .unwrap_or_else(|| (d.min(k) / 4).max(1)),
        n_clients: n,
        samples_per_client: doc
            .problem
            .samples_per_client
            .unwrap_or_else(|| vec![2 * d; n]),
        hetero_sigma: doc.problem.hetero_sigma.unwrap_or(0.0),
        grad_noise_sigma: doc.problem.grad_noise_sigma.unwrap_or(0.0),
        noise_mode: doc.problem.noise_mode.unwrap_or(NoiseMode::Additive),
        batch_size: doc.problem.batch_size.unwrap_or(1),
        shared_design: doc.problem.shared_design.unwrap_or(false),
        // A seed pinned in the document survives seed sweeps; otherwise the
        // problem follows the experiment seed.
        master_seed: doc.problem.master_seed.unwrap_or(master_seed),
    };
    let train = LocalTrainConfig {
        local_steps: doc.train.local_steps.unwrap_or(1),
        learning_rate: doc.train.learning_rate.unwrap_or(0.05),
        batch_size: doc.train.batch_size.unwrap_or(1),
        weight_decay: doc.train.weight_decay.unwrap_or(0.0),
    };
    let cfg = ExperimentConfig {
        problem,
        train,
        rounds: doc.rounds,
        ranks: doc.ranks,
        strategy: doc.strategy.unwrap_or(AggregationStrategy::Fedhl),
        weight_policy: doc.weight_policy,
        participation_rate: doc.participation_rate.unwrap_or(1.0),
        init_scale: doc.init_scale.unwrap_or(0.01),
        client_mode: doc.client_mode.unwrap_or(ClientMode::Factored),
        lr_schedule: doc.lr_schedule.unwrap_or(LrSchedule::Constant),
        master_seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Whether the document explicitly pins the problem's own seed.
pub fn problem_seed_pinned(text: &str) -> Result<bool> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    Ok(value
        .get("problem")
        .and_then(|p| p.get("master_seed"))
        .is_some())
}

/// Serialize a config in fully explicit form; the output reparses to an
/// equal config.
pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}
