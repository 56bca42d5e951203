//! Master-slave architecture for top-K combinatorial bandits with non-linear
//! bandit feedback and diversity constraints.
//!
//! A master model estimates the environment feedback with an optimistic
//! neural estimator and, each round, picks the best of the elite samples
//! submitted by six heterogeneous slave samplers (integer-programming solver,
//! primal-dual actor-critic, relation-inference attention, evolutionary
//! cross-entropy, uniform random with best-in-history, and teacher-student
//! perturbation). Slaves train against the master's surrogate instead of
//! spending environment rounds, and co-train through shared buffers and
//! demonstration losses.

pub mod config;
pub mod cotraining;
pub mod env;
pub mod error;
pub mod gumbel;
pub mod harness;
pub mod linalg;
pub mod master;
pub mod neuralucb;
pub mod nn;
pub mod plot;
pub mod samplers;
pub mod seeding;
pub mod types;

pub use error::{Error, Result};
