//! Deterministic simulator for federated learning with heterogeneous-rank
//! low-rank adapters.
//!
//! The crate provides:
//!
//! * dense matrix arithmetic with full and truncated SVD ([`matrix`],
//!   [`svd`], [`lora`]);
//! * a synthetic convex federated task with exact losses and gradients and
//!   controllable noise/heterogeneity ([`task`]);
//! * factored and full-matrix local SGD with keyed, coupled noise streams
//!   ([`client`], [`rng`]);
//! * the aggregation rules and weight policies under comparison
//!   ([`aggregation`]);
//! * the round loop ([`orchestrator`]), bias/drift diagnostics
//!   ([`diagnostics`]) and a batch runner with bit-stable CSV/JSON output
//!   ([`config`], [`runner`]).
//!
//! Every random draw is keyed by `(master_seed, stream)`, so experiment
//! results are pure functions of their configuration.

pub mod aggregation;
pub mod client;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod lora;
pub mod matrix;
pub mod orchestrator;
pub mod rng;
pub mod runner;
pub mod svd;
pub mod task;

pub use aggregation::{AggregationStrategy, WeightPolicy, WeightPolicyKind, WeightVector};
pub use client::{ClientUpdate, LocalTrainConfig};
pub use error::{Error, Result};
pub use lora::LoraFactors;
pub use matrix::{frob_dist_sq, Matrix};
pub use orchestrator::{ClientMode, ExperimentConfig, LrSchedule, RoundMetrics, RoundState};
pub use rng::{RngStreamKey, StreamDomain};
pub use svd::{svd, truncate_to_rank, SvdTriple};
pub use task::{ClientDataset, NoiseMode, Problem, ProblemSpec};
