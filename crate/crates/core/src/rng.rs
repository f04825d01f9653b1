//! Keyed deterministic random streams.
//!
//! Every random draw in the simulator comes from a ChaCha12 stream whose
//! 256-bit seed is the master seed plus a structured key. Streams are
//! independent of execution order and of parameter values, which is what
//! makes common-random-number coupling between the factored and full-rank
//! trajectories possible.

use crate::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Namespaces for the independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamDomain {
    /// Global model initialisation.
    Init = 1,
    /// Ground-truth factor draws.
    ProblemTruth = 2,
    /// Per-client ground-truth perturbations.
    ProblemHetero = 3,
    /// Per-client design matrices.
    ProblemDesign = 4,
    /// Local-training gradient noise / batch indices.
    Train = 5,
    /// Cohort sampling for partial participation.
    Cohort = 6,
    /// Monte-Carlo draws for variance estimation.
    SigmaEstimate = 7,
    /// Replicated drift-trace noise realisations.
    DriftReplica = 8,
}

/// Identifies one random stream: a domain plus entity/round/step indices.
///
/// `entity` is typically a client id, `round` the communication round (or a
/// replica index for Monte-Carlo work), and `step` the local SGD step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStreamKey {
    pub domain: StreamDomain,
    pub entity: u64,
    pub round: u64,
    pub step: u64,
}

impl RngStreamKey {
    pub fn new(domain: StreamDomain, entity: u64, round: u64) -> Self {
        RngStreamKey {
            domain,
            entity,
            round,
            step: 0,
        }
    }

    /// Same stream family, different local step.
    pub fn with_step(self, step: u64) -> Self {
        RngStreamKey { step, ..self }
    }
}

/// Build the generator for `(master_seed, key)`. Same inputs, same stream.
pub fn stream_rng(master_seed: u64, key: RngStreamKey) -> ChaCha12Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    let tagged_round = ((key.domain as u64) << 56) | (key.round & 0x00FF_FFFF_FFFF_FFFF);
    seed[8..16].copy_from_slice(&tagged_round.to_le_bytes());
    seed[16..24].copy_from_slice(&key.entity.to_le_bytes());
    seed[24..32].copy_from_slice(&key.step.to_le_bytes());
    ChaCha12Rng::from_seed(seed)
}

/// Matrix with i.i.d. standard-normal entries drawn row-major from `rng`.
pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}
