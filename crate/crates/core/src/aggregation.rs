//! Server-side aggregation rules and weight policies.
//!
//! Four aggregation rules are provided. With `Δ_i = W_{t+1}^i − W_t^{r_i}`:
//!
//! * `joint`               — `Σ pᵢ W_{t+1}^i` (multiply-then-aggregate);
//! * `truncated_baseline`  — `Σ pᵢ (W_t^{r_i} + Δᵢ)`, the incremental form
//!   used by rank-truncating methods (algebraically equal to `joint`);
//! * `fedhl`               — `W_t + Σ pᵢ Δᵢ`, which anchors every client's
//!   increment on the full-rank global model so the per-round truncation
//!   bias term is zero by construction;
//! * `zero_padding`        — pad all factors to a common rank and average
//!   `B` and `A` separately, which exhibits the cross-term noise of
//!   factor-wise averaging.

use crate::error::{Error, Result};
use crate::lora::LoraFactors;
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

/// Aggregation rule selector. The serialized names are stable config strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    ZeroPadding,
    TruncatedBaseline,
    Joint,
    Fedhl,
}

impl AggregationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationStrategy::ZeroPadding => "zero_padding",
            AggregationStrategy::TruncatedBaseline => "truncated_baseline",
            AggregationStrategy::Joint => "joint",
            AggregationStrategy::Fedhl => "fedhl",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zero_padding" => Ok(AggregationStrategy::ZeroPadding),
            "truncated_baseline" => Ok(AggregationStrategy::TruncatedBaseline),
            "joint" => Ok(AggregationStrategy::Joint),
            "fedhl" => Ok(AggregationStrategy::Fedhl),
            other => Err(Error::InvalidConfig {
                field: "strategy".into(),
                message: format!(
                    "unknown strategy `{other}` (expected zero_padding, truncated_baseline, joint or fedhl)"
                ),
            }),
        }
    }
}

/// Weight policy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightPolicyKind {
    #[serde(rename = "fedavg")]
    FedavgProportional,
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "fedhl_optimal")]
    FedhlOptimal,
}

/// Weight policy with its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightPolicy {
    pub kind: WeightPolicyKind,
    /// Floor added to the squared truncation errors in the optimal weights.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Post-normalisation softmax temperature; `null` disables smoothing.
    #[serde(default = "default_temperature")]
    pub softmax_temperature: Option<f64>,
    /// Feed the square of the recorded truncation error into the optimal
    /// weights instead of the error itself (the alternative notational
    /// reading of the optimal-weight formula).
    #[serde(default)]
    pub fourth_power: bool,
    /// Multiply the optimal weights by the sample proportions and
    /// renormalise.
    #[serde(default)]
    pub hybrid_sample_counts: bool,
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_temperature() -> Option<f64> {
    Some(1.0)
}

impl WeightPolicy {
    pub fn fedavg() -> Self {
        WeightPolicy {
            kind: WeightPolicyKind::FedavgProportional,
            epsilon: default_epsilon(),
            softmax_temperature: default_temperature(),
            fourth_power: false,
            hybrid_sample_counts: false,
        }
    }

    pub fn uniform() -> Self {
        WeightPolicy {
            kind: WeightPolicyKind::Uniform,
            ..WeightPolicy::fedavg()
        }
    }

    pub fn fedhl_optimal() -> Self {
        WeightPolicy {
            kind: WeightPolicyKind::FedhlOptimal,
            ..WeightPolicy::fedavg()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "weight_policy.epsilon".into(),
                message: format!("must be > 0, got {}", self.epsilon),
            });
        }
        if let Some(t) = self.softmax_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: "weight_policy.softmax_temperature".into(),
                    message: format!("must be > 0 when enabled, got {t}"),
                });
            }
        }
        Ok(())
    }
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Accepts a vector already on the simplex (sum within 1e-12 of one).
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::EmptyInput("weight vector"));
        }
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "weights".into(),
                message: "weights must be finite and non-negative".into(),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig {
                field: "weights".into(),
                message: format!("weights sum to {sum}, expected 1"),
            });
        }
        Ok(WeightVector(p))
    }

    /// Normalises non-negative masses onto the simplex.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::EmptyInput("weight vector"));
        }
        if masses.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "weights".into(),
                message: "weight masses must be finite and non-negative".into(),
            });
        }
        let sum: f64 = masses.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "weights".into(),
                message: "weight masses sum to zero".into(),
            });
        }
        // Plain normalisation: the sum lands within a few ulp of one, and
        // equal masses stay bit-equal (exact tie monotonicity).
        let p: Vec<f64> = masses.into_iter().map(|v| v / sum).collect();
        WeightVector::new(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sample-proportional weights `pᵢ = mᵢ / Σ mⱼ`.
pub fn fedavg_weights(sample_counts: &[usize]) -> Result<WeightVector> {
    if sample_counts.is_empty() {
        return Err(Error::EmptyInput("sample counts"));
    }
    WeightVector::from_masses(sample_counts.iter().map(|&m| m as f64).collect())
}

/// Uniform weights over `n` participants.
pub fn uniform_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::EmptyInput("participant count"));
    }
    WeightVector::from_masses(vec![1.0; n])
}

/// Inverse-truncation-error weights `pᵢ ∝ 1 / (r̂ᵢ² + ε)`, the closed-form
/// minimiser of `Σ pᵢ²(r̂ᵢ² + ε)` over the simplex.
pub fn fedhl_weights(trunc_err_sq: &[f64], epsilon: f64) -> Result<WeightVector> {
    if trunc_err_sq.is_empty() {
        return Err(Error::EmptyInput("truncation errors"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "epsilon".into(),
            message: format!("must be > 0, got {epsilon}"),
        });
    }
    if trunc_err_sq.iter().any(|&e| e < 0.0 || !e.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "trunc_err_sq".into(),
            message: "truncation errors must be finite and non-negative".into(),
        });
    }
    WeightVector::from_masses(trunc_err_sq.iter().map(|&e| 1.0 / (e + epsilon)).collect())
}

/// Softmax smoothing `qᵢ = exp(pᵢ/τ) / Σ exp(pⱼ/τ)`; order-preserving.
pub fn softmax_smooth(w: &WeightVector, temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "softmax_temperature".into(),
            message: format!("must be > 0, got {temperature}"),
        });
    }
    WeightVector::from_masses(w.as_slice().iter().map(|&p| (p / temperature).exp()).collect())
}

fn check_lengths(updates: usize, weights: &WeightVector, what: &str) -> Result<()> {
    if updates != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {updates} updates vs {} weights",
            weights.len()
        )));
    }
    Ok(())
}

fn check_same_shapes(mats: &[Matrix], what: &str) -> Result<()> {
    if mats.is_empty() {
        return Err(Error::EmptyInput("update list"));
    }
    let shape = mats[0].shape();
    if mats.iter().any(|m| m.shape() != shape) {
        return Err(Error::ShapeMismatch(format!("{what}: inconsistent shapes")));
    }
    Ok(())
}

fn weighted_sum(mats: &[Matrix], w: &WeightVector) -> Matrix {
    let mut out = Matrix::zeros(mats[0].rows(), mats[0].cols());
    for (m, &p) in mats.iter().zip(w.as_slice()) {
        out.axpy(p, m);
    }
    out
}

/// `Σ pᵢ Wᵢ` over already-reconstructed client models.
pub fn aggregate_joint(updates: &[Matrix], w: &WeightVector) -> Result<Matrix> {
    check_lengths(updates.len(), w, "aggregate_joint")?;
    check_same_shapes(updates, "aggregate_joint")?;
    Ok(weighted_sum(updates, w))
}

/// `Σ pᵢ (W_t^{r_i} + Δᵢ)` — truncated models as the aggregation baseline.
pub fn aggregate_truncated_baseline(
    global_prev_trunc: &[Matrix],
    deltas: &[Matrix],
    w: &WeightVector,
) -> Result<Matrix> {
    check_lengths(global_prev_trunc.len(), w, "aggregate_truncated_baseline")?;
    if global_prev_trunc.len() != deltas.len() {
        return Err(Error::ShapeMismatch(format!(
            "aggregate_truncated_baseline: {} baselines vs {} deltas",
            global_prev_trunc.len(),
            deltas.len()
        )));
    }
    check_same_shapes(global_prev_trunc, "aggregate_truncated_baseline")?;
    check_same_shapes(deltas, "aggregate_truncated_baseline")?;
    if global_prev_trunc[0].shape() != deltas[0].shape() {
        return Err(Error::ShapeMismatch(
            "aggregate_truncated_baseline: baseline/delta shapes differ".into(),
        ));
    }
    let mut out = Matrix::zeros(deltas[0].rows(), deltas[0].cols());
    for ((base, delta), &p) in global_prev_trunc.iter().zip(deltas).zip(w.as_slice()) {
        out.axpy(p, &base.add(delta));
    }
    Ok(out)
}

/// `W_t + Σ pᵢ (W_{t+1}^i − W_t^{r_i})` — the full-rank global model is the
/// aggregation baseline, so the `Σ pᵢ (W_t − W_t)` term is exactly zero.
pub fn aggregate_fedhl(
    global_prev: &Matrix,
    updates: &[Matrix],
    global_prev_trunc: &[Matrix],
    w: &WeightVector,
) -> Result<Matrix> {
    check_lengths(updates.len(), w, "aggregate_fedhl")?;
    if updates.len() != global_prev_trunc.len() {
        return Err(Error::ShapeMismatch(format!(
            "aggregate_fedhl: {} updates vs {} truncations",
            updates.len(),
            global_prev_trunc.len()
        )));
    }
    check_same_shapes(updates, "aggregate_fedhl")?;
    check_same_shapes(global_prev_trunc, "aggregate_fedhl")?;
    if updates[0].shape() != global_prev.shape() {
        return Err(Error::ShapeMismatch(
            "aggregate_fedhl: update/global shapes differ".into(),
        ));
    }
    let mut out = global_prev.clone();
    for ((upd, trunc), &p) in updates.iter().zip(global_prev_trunc).zip(w.as_slice()) {
        out.axpy(p, &upd.sub(trunc));
    }
    Ok(out)
}

/// Pad `(B, A)` to rank `r_max` with zero columns/rows, folding the adapter
/// scaling into `B` so the padded product equals the effective contribution.
pub(crate) fn padded_parts(f: &LoraFactors, r_max: usize) -> Result<(Matrix, Matrix)> {
    if f.rank() > r_max {
        return Err(Error::RankOutOfRange {
            rank: f.rank(),
            max: r_max,
        });
    }
    let (d, k) = f.out_shape();
    let s = f.scaling();
    let mut b = Matrix::zeros(d, r_max);
    for i in 0..d {
        for j in 0..f.rank() {
            b[(i, j)] = s * f.b()[(i, j)];
        }
    }
    let mut a = Matrix::zeros(r_max, k);
    for j in 0..f.rank() {
        for l in 0..k {
            a[(j, l)] = f.a()[(j, l)];
        }
    }
    Ok((b, a))
}

/// Factor-wise averaging after zero-padding to rank `r_max`: returns `B̄·Ā`.
pub fn aggregate_zero_padding(
    factor_updates: &[LoraFactors],
    w: &WeightVector,
    r_max: usize,
) -> Result<Matrix> {
    check_lengths(factor_updates.len(), w, "aggregate_zero_padding")?;
    if factor_updates.is_empty() {
        return Err(Error::EmptyInput("factor updates"));
    }
    let shape = factor_updates[0].out_shape();
    if factor_updates.iter().any(|f| f.out_shape() != shape) {
        return Err(Error::ShapeMismatch(
            "aggregate_zero_padding: inconsistent adapter output shapes".into(),
        ));
    }
    let mut b_bar = Matrix::zeros(shape.0, r_max);
    let mut a_bar = Matrix::zeros(r_max, shape.1);
    for (f, &p) in factor_updates.iter().zip(w.as_slice()) {
        let (b, a) = padded_parts(f, r_max)?;
        b_bar.axpy(p, &b);
        a_bar.axpy(p, &a);
    }
    Ok(b_bar.matmul(&a_bar))
}

/// Frobenius norm of the factor-averaging artefact
/// `‖B̄Ā − Σ pᵢ BᵢAᵢ‖_F` over equal-rank clients.
pub fn cross_term_noise(factor_updates: &[LoraFactors], w: &WeightVector) -> Result<f64> {
    check_lengths(factor_updates.len(), w, "cross_term_noise")?;
    if factor_updates.is_empty() {
        return Err(Error::EmptyInput("factor updates"));
    }
    let rank = factor_updates[0].rank();
    if factor_updates.iter().any(|f| f.rank() != rank) {
        return Err(Error::ShapeMismatch(
            "cross_term_noise requires equal ranks; pad factors first".into(),
        ));
    }
    let averaged = aggregate_zero_padding(factor_updates, w, rank)?;
    let mut exact = Matrix::zeros(averaged.rows(), averaged.cols());
    for (f, &p) in factor_updates.iter().zip(w.as_slice()) {
        exact.axpy(p, &crate::lora::reconstruct(f));
    }
    Ok(averaged.sub(&exact).frob_norm())
}
