//! Synthetic federated objective: per-client low-rank linear regression.
//!
//! Client `i` holds a design `X_i` (m_i×d) and targets `Y_i = X_i W*_i`,
//! where the per-client ground truths `W*_i` sit at a controlled distance
//! from a shared low-rank `W*`. The loss is `f_i(W) = ‖X_i W − Y_i‖_F² / (2 m_i)`,
//! so gradients are exact, the objective is convex, and both the
//! stochastic-gradient variance and the inter-client heterogeneity are
//! dialled in directly.

use crate::error::{Error, Result};
use crate::lora::LoraFactors;
use crate::matrix::Matrix;
use crate::rng::{normal_matrix, stream_rng, RngStreamKey, StreamDomain};
use crate::svd::svd;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How stochastic gradients are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Gradient over a uniformly sampled (with replacement) mini-batch.
    Minibatch,
    /// Exact gradient plus isotropic Gaussian noise of known variance.
    Additive,
}

/// One client's data shard.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    x: Matrix,
    y: Matrix,
}

impl ClientDataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyInput("client dataset"));
        }
        if x.rows() != y.rows() {
            return Err(Error::ShapeMismatch(format!(
                "design has {} rows, targets have {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok(ClientDataset { x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn num_samples(&self) -> usize {
        self.x.rows()
    }
}

/// Generation parameters for the synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub d: usize,
    pub k: usize,
    /// Rank of the shared ground truth `W*`.
    pub target_rank: usize,
    pub n_clients: usize,
    pub samples_per_client: Vec<usize>,
    /// Scale of the per-client ground-truth perturbation (σ_g knob).
    pub hetero_sigma: f64,
    /// Std-dev of the additive gradient noise (σ_l knob, additive mode).
    pub grad_noise_sigma: f64,
    pub noise_mode: NoiseMode,
    /// Mini-batch size used by the bare stochastic-gradient operation.
    pub batch_size: usize,
    /// All clients share one design matrix (useful to isolate heterogeneity).
    pub shared_design: bool,
    pub master_seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, msg: String| Error::InvalidConfig {
            field: f.into(),
            message: msg,
        };
        if self.d == 0 || self.k == 0 {
            return Err(field("problem.d", "dimensions must be positive".into()));
        }
        if self.target_rank == 0 || self.target_rank > self.d.min(self.k) {
            return Err(field(
                "problem.target_rank",
                format!(
                    "must lie in 1..={}, got {}",
                    self.d.min(self.k),
                    self.target_rank
                ),
            ));
        }
        if self.n_clients == 0 {
            return Err(field("problem.n_clients", "need at least one client".into()));
        }
        if self.samples_per_client.len() != self.n_clients {
            return Err(field(
                "problem.samples_per_client",
                format!(
                    "expected {} entries, got {}",
                    self.n_clients,
                    self.samples_per_client.len()
                ),
            ));
        }
        if self.samples_per_client.contains(&0) {
            return Err(field(
                "problem.samples_per_client",
                "every client needs at least one sample".into(),
            ));
        }
        if self.shared_design && self.samples_per_client.iter().any(|&m| m != self.samples_per_client[0]) {
            return Err(field(
                "problem.shared_design",
                "shared design requires equal sample counts".into(),
            ));
        }
        if !(self.hetero_sigma >= 0.0 && self.hetero_sigma.is_finite()) {
            return Err(field("problem.hetero_sigma", "must be ≥ 0".into()));
        }
        if !(self.grad_noise_sigma >= 0.0 && self.grad_noise_sigma.is_finite()) {
            return Err(field("problem.grad_noise_sigma", "must be ≥ 0".into()));
        }
        if self.batch_size == 0 {
            return Err(field("problem.batch_size", "must be ≥ 1".into()));
        }
        Ok(())
    }

    pub(crate) fn with_batch_size(&self, batch_size: usize) -> ProblemSpec {
        let mut spec = self.clone();
        spec.batch_size = batch_size;
        spec
    }
}

/// A fully generated problem instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub datasets: Vec<ClientDataset>,
    pub w_star: Matrix,
    pub w_star_i: Vec<Matrix>,
    /// `max_i λ_max(X_iᵀX_i / m_i)` — the smoothness constant of the task.
    pub smoothness_l: f64,
    total_samples: usize,
}

impl Problem {
    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    /// FedAvg population weight `m_i / m` of client `i`.
    pub fn population_weight(&self, client: usize) -> f64 {
        self.datasets[client].num_samples() as f64 / self.total_samples as f64
    }
}

/// Deterministically generate a problem instance from its spec.
pub fn generate_problem(spec: &ProblemSpec) -> Result<Problem> {
    spec.validate()?;
    let seed = spec.master_seed;
    let r = spec.target_rank;

    let left = {
        let mut rng = stream_rng(seed, RngStreamKey::new(StreamDomain::ProblemTruth, 0, 0));
        normal_matrix(&mut rng, spec.d, r)
    };
    let right = {
        let mut rng = stream_rng(seed, RngStreamKey::new(StreamDomain::ProblemTruth, 1, 0));
        normal_matrix(&mut rng, r, spec.k)
    };
    let w_star = left.matmul(&right).scale(1.0 / (r as f64).sqrt());

    let hetero_scale = spec.hetero_sigma / ((spec.d * spec.k) as f64).sqrt();
    let mut w_star_i = Vec::with_capacity(spec.n_clients);
    for i in 0..spec.n_clients {
        if spec.hetero_sigma == 0.0 {
            w_star_i.push(w_star.clone());
        } else {
            let mut rng = stream_rng(
                seed,
                RngStreamKey::new(StreamDomain::ProblemHetero, i as u64, 0),
            );
            let mut w = w_star.clone();
            w.axpy(hetero_scale, &normal_matrix(&mut rng, spec.d, spec.k));
            w_star_i.push(w);
        }
    }

    let mut datasets = Vec::with_capacity(spec.n_clients);
    let mut smoothness_l: f64 = 0.0;
    for (i, &m) in spec.samples_per_client.iter().enumerate() {
        let design_entity = if spec.shared_design { 0 } else { i as u64 };
        let mut rng = stream_rng(
            seed,
            RngStreamKey::new(StreamDomain::ProblemDesign, design_entity, 0),
        );
        let x = normal_matrix(&mut rng, m, spec.d);
        let y = x.matmul(&w_star_i[i]);
        let top = svd(&x)?.sigma[0];
        smoothness_l = smoothness_l.max(top * top / m as f64);
        datasets.push(ClientDataset::new(x, y)?);
    }

    let total_samples = spec.samples_per_client.iter().sum();
    Ok(Problem {
        spec: spec.clone(),
        datasets,
        w_star,
        w_star_i,
        smoothness_l,
        total_samples,
    })
}

/// `f_i(W) = ‖X W − Y‖_F² / (2 m)`.
pub fn loss(w: &Matrix, ds: &ClientDataset) -> Result<f64> {
    check_model_shape(w, ds)?;
    let resid = ds.x.matmul(w).sub(&ds.y);
    Ok(resid.frob_norm_sq() / (2.0 * ds.num_samples() as f64))
}

/// Exact gradient `∇f_i(W) = Xᵀ(X W − Y) / m`, shape d×k.
pub fn grad_w(w: &Matrix, ds: &ClientDataset) -> Result<Matrix> {
    check_model_shape(w, ds)?;
    let resid = ds.x.matmul(w).sub(&ds.y);
    Ok(ds.x.t_matmul(&resid).scale(1.0 / ds.num_samples() as f64))
}

fn check_model_shape(w: &Matrix, ds: &ClientDataset) -> Result<()> {
    if w.rows() != ds.x.cols() || w.cols() != ds.y.cols() {
        return Err(Error::ShapeMismatch(format!(
            "model {}x{} incompatible with design {}x{} / targets {}x{}",
            w.rows(),
            w.cols(),
            ds.x.rows(),
            ds.x.cols(),
            ds.y.rows(),
            ds.y.cols()
        )));
    }
    Ok(())
}

/// The randomness a stochastic gradient consumed, for coupling checks.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDraw {
    /// Additive-mode perturbation matrix actually added to the exact gradient.
    Additive(Matrix),
    /// Mini-batch sample indices.
    Minibatch(Vec<usize>),
    /// No randomness consumed (e.g. additive mode with zero sigma).
    None,
}

/// Unbiased stochastic gradient. Draws depend only on `(spec.master_seed,
/// stream)` — never on `w` — so streams can be shared across coupled runs.
pub fn stoch_grad_w(
    w: &Matrix,
    ds: &ClientDataset,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<Matrix> {
    stoch_grad_w_traced(w, ds, spec, stream).map(|(g, _)| g)
}

/// As [`stoch_grad_w`], but also returns the raw randomness consumed.
pub fn stoch_grad_w_traced(
    w: &Matrix,
    ds: &ClientDataset,
    spec: &ProblemSpec,
    stream: RngStreamKey,
) -> Result<(Matrix, NoiseDraw)> {
    check_model_shape(w, ds)?;
    if ds.num_samples() == 0 {
        return Err(Error::EmptyInput("client dataset"));
    }
    match spec.noise_mode {
        NoiseMode::Additive => {
            let grad = grad_w(w, ds)?;
            if spec.grad_noise_sigma == 0.0 {
                return Ok((grad, NoiseDraw::None));
            }
            let mut rng = stream_rng(spec.master_seed, stream);
            let scale = spec.grad_noise_sigma / ((w.rows() * w.cols()) as f64).sqrt();
            let noise = normal_matrix(&mut rng, w.rows(), w.cols()).scale(scale);
            Ok((grad.add(&noise), NoiseDraw::Additive(noise)))
        }
        NoiseMode::Minibatch => {
            let mut rng = stream_rng(spec.master_seed, stream);
            let m = ds.num_samples();
            let b = spec.batch_size;
            let indices: Vec<usize> = (0..b).map(|_| rng.random_range(0..m)).collect();
            let mut grad = Matrix::zeros(w.rows(), w.cols());
            for &s in &indices {
                let xs = ds.x.row(s);
                // z = x_s·W − y_s, then accumulate the outer product x_sᵀ z.
                for l in 0..w.cols() {
                    let mut z = -ds.y[(s, l)];
                    for (j, &xj) in xs.iter().enumerate() {
                        z += xj * w[(j, l)];
                    }
                    if z != 0.0 {
                        for (j, &xj) in xs.iter().enumerate() {
                            grad[(j, l)] += xj * z;
                        }
                    }
                }
            }
            Ok((grad.scale(1.0 / b as f64), NoiseDraw::Minibatch(indices)))
        }
    }
}

/// Chain rule from a weight-space gradient to the factor gradients:
/// `G_B = s·G_w·Aᵀ`, `G_A = s·Bᵀ·G_w` with `s = alpha / rank`.
pub fn lora_grads(factors: &LoraFactors, g_w: &Matrix) -> Result<(Matrix, Matrix)> {
    let (d, k) = factors.out_shape();
    if g_w.shape() != (d, k) {
        return Err(Error::ShapeMismatch(format!(
            "gradient {}x{} vs adapter output {d}x{k}",
            g_w.rows(),
            g_w.cols()
        )));
    }
    let s = factors.scaling();
    let g_b = g_w.matmul_t(factors.a()).scale(s);
    let g_a = factors.b().t_matmul(g_w).scale(s);
    Ok((g_b, g_a))
}

/// Population objective `f(W) = Σ (m_i/m) f_i(W)` over all clients.
pub fn global_loss(problem: &Problem, w: &Matrix) -> Result<f64> {
    let mut acc = 0.0;
    for (i, ds) in problem.datasets.iter().enumerate() {
        acc += problem.population_weight(i) * loss(w, ds)?;
    }
    Ok(acc)
}

/// Population gradient `∇f(W) = Σ (m_i/m) ∇f_i(W)`.
pub fn global_grad(problem: &Problem, w: &Matrix) -> Result<Matrix> {
    let mut acc = Matrix::zeros(w.rows(), w.cols());
    for (i, ds) in problem.datasets.iter().enumerate() {
        acc.axpy(problem.population_weight(i), &grad_w(w, ds)?);
    }
    Ok(acc)
}

/// Per-client losses, in client order.
pub fn per_client_losses(problem: &Problem, w: &Matrix) -> Result<Vec<f64>> {
    problem.datasets.iter().map(|ds| loss(w, ds)).collect()
}
