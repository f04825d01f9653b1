//! Client-side local training.
//!
//! Two interchangeable local update rules share one noise stream layout:
//! factored SGD on the adapter pair `(B, A)` and full-matrix SGD on `W`
//! itself. Step `τ` of either rule consumes the stream `stream.with_step(τ)`,
//! so runs started from different points see identical noise realisations.

use crate::error::{Error, Result};
use crate::lora::{reconstruct, LoraFactors};
use crate::matrix::Matrix;
use crate::rng::RngStreamKey;
use crate::task::{lora_grads, stoch_grad_w_traced, ClientDataset, NoiseDraw, ProblemSpec};
use serde::{Deserialize, Serialize};

/// Local SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTrainConfig {
    /// Number of local steps K (0 allowed: the update is a no-op).
    pub local_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Per-step multiplicative decay factor applied as `1 − η·decay`; 0 = off.
    pub weight_decay: f64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "train.learning_rate".into(),
                message: format!("must be a finite non-negative real, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "train.batch_size".into(),
                message: "must be ≥ 1".into(),
            });
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "train.weight_decay".into(),
                message: "must be ≥ 0".into(),
            });
        }
        Ok(())
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub factors_after: LoraFactors,
    pub reconstructed: Matrix,
    pub steps_taken: usize,
}

/// Per-step randomness consumed during a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub draws: Vec<NoiseDraw>,
}

/// K steps of simultaneous SGD on `(B, A)` from server-issued factors.
pub fn local_train(
    factors: &LoraFactors,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<ClientUpdate> {
    local_train_inner(factors, ds, cfg, spec, stream, None)
}

/// As [`local_train`], also capturing the raw noise draws.
pub fn local_train_traced(
    factors: &LoraFactors,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<(ClientUpdate, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let update = local_train_inner(factors, ds, cfg, spec, stream, Some(&mut trace))?;
    Ok((update, trace))
}

fn local_train_inner(
    factors: &LoraFactors,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
    mut trace: Option<&mut TrainTrace>,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    let spec = spec.with_batch_size(cfg.batch_size);
    let eta = cfg.learning_rate;
    let decay = 1.0 - eta * cfg.weight_decay;
    let mut current = factors.clone();
    for step in 0..cfg.local_steps {
        let w_eff = reconstruct(&current);
        let (g_w, draw) = stoch_grad_w_traced(&w_eff, ds, &spec, stream.with_step(step as u64))?;
        if let Some(t) = trace.as_deref_mut() {
            t.draws.push(draw);
        }
        // Both factor gradients are taken at the pre-update pair.
        let (g_b, g_a) = lora_grads(&current, &g_w)?;
        let mut b = if cfg.weight_decay > 0.0 {
            current.b().scale(decay)
        } else {
            current.b().clone()
        };
        let mut a = if cfg.weight_decay > 0.0 {
            current.a().scale(decay)
        } else {
            current.a().clone()
        };
        b.axpy(-eta, &g_b);
        a.axpy(-eta, &g_a);
        if !b.is_finite() || !a.is_finite() {
            return Err(Error::Divergence {
                step,
                round: None,
                client: None,
            });
        }
        current = current.replace_parts(b, a)?;
    }
    let reconstructed = reconstruct(&current);
    Ok(ClientUpdate {
        client_id: stream.entity as usize,
        factors_after: current,
        reconstructed,
        steps_taken: cfg.local_steps,
    })
}

/// K steps of full-matrix SGD from `w`, consuming the same per-step streams
/// as [`local_train`]. This is both the auxiliary full-rank trajectory used
/// by the diagnostics and the "W-space" client update rule.
pub fn shadow_train(
    w: &Matrix,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<Matrix> {
    shadow_train_inner(w, ds, cfg, spec, stream, None)
}

/// As [`shadow_train`], also capturing the raw noise draws.
pub fn shadow_train_traced(
    w: &Matrix,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<(Matrix, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let out = shadow_train_inner(w, ds, cfg, spec, stream, Some(&mut trace))?;
    Ok((out, trace))
}

fn shadow_train_inner(
    w: &Matrix,
    ds: &ClientDataset,
    cfg: &LocalTrainConfig,
    spec: &ProblemSpec,
    stream: RngStreamKey,
    mut trace: Option<&mut TrainTrace>,
) -> Result<Matrix> {
    cfg.validate()?;
    let spec = spec.with_batch_size(cfg.batch_size);
    let eta = cfg.learning_rate;
    let decay = 1.0 - eta * cfg.weight_decay;
    let mut current = w.clone();
    for step in 0..cfg.local_steps {
        let (g, draw) = stoch_grad_w_traced(&current, ds, &spec, stream.with_step(step as u64))?;
        if let Some(t) = trace.as_deref_mut() {
            t.draws.push(draw);
        }
        if cfg.weight_decay > 0.0 {
            current = current.scale(decay);
        }
        current.axpy(-eta, &g);
        if !current.is_finite() {
            return Err(Error::Divergence {
                step,
                round: None,
                client: None,
            });
        }
    }
    Ok(current)
}
