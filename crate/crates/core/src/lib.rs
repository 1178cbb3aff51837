//! Continuous-time Markov process toolkit for intrusion detection.
//!
//! The crate is built around a homogeneous continuous-time Markov chain core
//! ([`ctmc`]): intensity matrices, trajectory sampling, likelihoods, and
//! exact inference over partially observed trajectories. [`ctbn`] composes
//! chains into structured multi-variable processes with conditional intensity
//! matrices. Two detector pipelines sit on top: [`nids`] models network
//! traffic per port with a shared latent environment variable and scores
//! traffic windows by likelihood, and [`hids`] models system-call streams
//! recorded by a finite-resolution clock. [`synth`] generates labeled
//! synthetic data for both pipelines and [`eval`] turns scores into ROC
//! curves and confusion matrices.

pub mod ctbn;
pub mod ctmc;
pub mod eval;
pub mod hids;
pub mod nids;
pub mod rng;
pub mod synth;

mod error;

pub use error::{Error, Result};
