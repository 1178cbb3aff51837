//! Structured continuous-time models: per-variable conditional intensity
//! matrices over a directed (possibly cyclic) graph, flattening into a joint
//! chain, forward sampling, complete-data estimation, and exact EM on the
//! flattened process.

mod amalgamate;
mod em;
mod learn;
mod model;
mod sample;
mod serialize;
mod trajectory;

pub use amalgamate::{amalgamate, amalgamate_capped, JOINT_CAP};
pub use em::{exact_em, exact_estep, CtbnEmOutcome};
pub use learn::{ctbn_loglik, ctbn_mle, ctbn_suff_stats, ConditionalSuffStats};
pub use model::{joint_decode, joint_index, parent_index, Cim, CtbnModel};
pub use sample::{forward_sample, forward_sample_clamped, forward_sample_rng};
pub use serialize::{parse_model, write_model};
pub use trajectory::{joint_evidence, JointEvent, JointTrajectory};
