//! Homogeneous continuous-time Markov chains: intensity matrices, trajectory
//! sampling, complete-data likelihood and estimation, and exact inference
//! over partially observed trajectories.

mod em;
mod ess;
mod evidence;
mod expm;
mod matrix;
mod message;
mod trajectory;

pub(crate) use ess::integrate_outer;
pub(crate) use expm::expm;
pub(crate) use trajectory::{sample_categorical, sample_successor, PSEUDO_COUNT};
pub use em::{em_fit, EmConfig, EmOutcome};
pub use ess::expected_suff_stats;
pub use evidence::{EvidenceSegment, EvidenceTrajectory};
pub use matrix::IntensityMatrix;
pub use message::{message_pass, message_pass_with_initial, MessagePass};
pub use trajectory::{
    loglik_complete, mle_complete, sample_trajectory, suff_stats_complete, SufficientStatistics,
    Trajectory,
};
