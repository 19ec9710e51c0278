//! Decentralized dynamic consensus optimization.
//!
//! A network of `n` nodes tracks the minimizer of a time-varying sum of
//! local objectives while exchanging information only with graph neighbors.
//! The main solver is ESOM-K: primal descent / dual ascent on a quadratic
//! approximation of the time-varying augmented Lagrangian, with the Hessian
//! inverse applied through a K-term truncated series so every round stays
//! neighbor-local.
//!
//! Crate layout:
//! - [`topology`]: random connected graphs and Metropolis mixing matrices.
//! - [`objective`]: the time-varying objective abstraction plus the dynamic
//!   least-squares family used in the experiments.
//! - [`esom`]: the decentralized ESOM-K stepper and its split operators.
//! - [`baselines`]: dynamic EXTRA, NN-0, and gradient-descent comparators.
//! - [`oracle`]: centralized ground truth (instantaneous optima, KKT duals,
//!   dense reference steppers).
//! - [`harness`]: experiment runner, metrics, CSV export, and configuration.

pub mod baselines;
pub mod error;
pub mod esom;
pub mod harness;
pub mod objective;
pub mod oracle;
pub mod topology;

pub use error::DesomError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DesomError>;
