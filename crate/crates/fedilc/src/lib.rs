//! Federated learning with consistency-seeking gradient aggregation.
//!
//! The crate simulates round-based federations where clients upload
//! gradients and head-gradient variance diagonals, and the server combines
//! them either arithmetically or with a sign-partitioned weighted
//! geometric mean, optionally regularized by a Fishr-style variance
//! penalty. It ships:
//!
//! - [`nn`]: a small deterministic MLP engine (ReLU hidden layers,
//!   sigmoid/softmax heads, Adam with decoupled weight decay);
//! - [`aggregation`]: the gradient-combination rules and the variance
//!   penalty;
//! - [`federation`]: the round protocol, in-process or over HTTP+JSON;
//! - [`datasets`]: non-i.i.d. silo generators (colored digits, rotated
//!   images, synthetic spurious-feature and clinical benchmarks) plus
//!   IDX/CIFAR-binary/CSV loaders;
//! - [`metrics`]: AUROC/AUPRC, accuracy, and per-silo fairness stats;
//! - [`analysis`]: quadratic-environment inconsistency scores;
//! - [`experiment`]: config-driven runs, lambda sweeps, CSV/JSON output.

pub mod aggregation;
pub mod analysis;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
