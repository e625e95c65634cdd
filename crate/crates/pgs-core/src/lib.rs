//! Offline black-box optimization by policy-guided gradient search.
//!
//! The pipeline: fit a smooth surrogate of the objective to a fixed offline
//! dataset, synthesize gradient-ascent trajectories from the best slice of
//! that dataset, train a conservative off-policy agent whose action is a
//! per-dimension step-size vector, then run the learned policy as the step
//! schedule of gradient ascent on the surrogate. A trajectory-embedding
//! scorer picks hyperparameters without touching the ground-truth objective.

pub mod agents;
pub mod config;
pub mod error;
pub mod numerics;
pub mod osel;
pub mod search;
pub mod seed;
pub mod stats;
pub mod surrogate;
pub mod tasks;
pub mod trajectories;

pub use error::{Error, Result};
