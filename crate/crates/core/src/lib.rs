//! Desk-scale simulator of decentralized query-based knowledge transfer.
//!
//! A network of clients holds non-IID partitions of a labeled dataset and
//! trains small dense classifiers locally. A student client that wants to
//! learn classes it barely owns ("query classes") receives the peer models
//! once and distills from them. The crate implements:
//!
//! - [`nn`]: the dense-network substrate (hand-derived gradients, Adam,
//!   parameter freezing, portable checkpoints),
//! - [`data`]: synthetic/CSV datasets, pathological and Dirichlet client
//!   partitions, query-class selection,
//! - [`transfer`]: noise-based teacher probing, per-teacher class masks,
//!   masked distillation, and the two-phase transfer protocols,
//! - [`baselines`]: FedAvg, fine-tuned FedAvg and prediction-averaging
//!   ensembles for comparison,
//! - [`metrics`]: per-class accuracy and the derived report metrics,
//! - [`harness`]: config-driven experiment orchestration behind the CLI.
//!
//! All numeric kernels are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the concrete aliases below fix the double-precision types the simulator
//! runs with.

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the simulator end to end.
pub type Real = f64;

/// Double-precision model parameters.
pub type Model = nn::ModelParams<Real>;
/// Double-precision batch/feature matrix.
pub type Mat = linalg::Matrix<Real>;
/// Double-precision parameter gradients.
pub type Grads = nn::Grads<Real>;
/// Double-precision Adam optimizer state.
pub type AdamState = nn::AdamState<Real>;
/// Double-precision client partition.
pub type ClientDataset = data::ClientDataset<Real>;
/// Double-precision global dataset.
pub type GlobalDataset = data::GlobalDataset<Real>;
/// Double-precision teacher probe.
pub type TeacherProbe = transfer::TeacherProbe<Real>;
/// Double-precision teacher mask.
pub type TeacherMask = transfer::TeacherMask<Real>;
