//! Preference optimization over aligned mutant sequences.
//!
//! The crate implements two trainers that share a loss, optimizer and
//! early-stopping loop:
//!
//! * a baseline that scores every exhaustive preference pair with full
//!   pseudo-log-likelihoods (one forward pass per position), and
//! * a grouped variant that first clusters sequences so that clusters have
//!   small union masks, then scores `g` same-cluster sequences with a single
//!   jointly masked forward pass and trains on every pair inside the group.
//!
//! Models are small and exactly computable ([`model::PwmModel`],
//! [`model::PottsModel`]) so approximation error and forward-pass counts can
//! be checked against brute-force oracles.

pub mod clustering;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod seqdata;
pub mod training;

pub use error::{Error, Result};
