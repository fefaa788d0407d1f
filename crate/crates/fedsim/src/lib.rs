//! Deterministic single-process simulator of a federated worker cluster.
//!
//! The crate builds synthetic optimization problems with controllable
//! second-order heterogeneity, runs local and variance-reduced distributed
//! optimizers over a simulated federation fabric that meters communication
//! rounds and per-worker gradient budgets, and ships an independent check
//! suite for the estimator properties the optimizers rely on.
//!
//! Layout:
//! - [`vector`]: dense parameter vectors and fixed-order reductions
//! - [`rng`]: the seed tree that derives every random stream in a run
//! - [`problems`]: quadratic families and synthetic classification + MLP
//! - [`cluster`]: ledger, aggregation and budget accounting
//! - [`algorithms`]: the optimizers (local GD, BVR-L-SGD and baselines)
//! - [`harness`]: run configs, metric collection, sweeps, grids, plots
//! - [`verify`]: estimator property checks with independent oracles

pub mod algorithms;
pub mod cluster;
pub mod harness;
pub mod problems;
pub mod record;
pub mod rng;
pub mod vector;
pub mod verify;

pub use vector::ParamVector;
