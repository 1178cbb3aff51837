//! Expectation-maximization for a chain observed through evidence
//! trajectories.
//!
//! Each iteration runs the exact message pass over every trajectory, sums
//! expected sufficient statistics, and re-estimates rates with the same
//! regularized division used for complete data. The reported log-likelihood
//! sequence is evaluated at the iterate entering each E step and is
//! non-decreasing up to the small pseudo-statistic regularization.

use super::evidence::EvidenceTrajectory;
use super::{expected_suff_stats, message_pass, mle_complete, IntensityMatrix, SufficientStatistics};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood improvement falls below this.
    pub rel_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub model: IntensityMatrix,
    /// Log evidence at the start of each iteration.
    pub loglik: Vec<f64>,
    pub converged: bool,
}

/// Fit a chain to evidence trajectories by EM starting from `init`.
pub fn em_fit(
    init: &IntensityMatrix,
    evidence: &[EvidenceTrajectory],
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    if evidence.is_empty() {
        return Err(Error::InvalidArgument("no evidence trajectories".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let n = init.n();
    let mut model = init.clone();
    let mut loglik: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let mut stats = SufficientStatistics::zeros(n);
        let mut ll = 0.0;
        for (idx, ev) in evidence.iter().enumerate() {
            let mp = message_pass(&model, ev)?;
            if mp.collapsed() {
                return Err(Error::InvalidEvidence(format!(
                    "trajectory {idx} has probability zero under the current model"
                )));
            }
            ll += mp.loglik();
            stats.add(&expected_suff_stats(&mp)?);
        }
        if let Some(&prev) = loglik.last() {
            if ll - prev <= cfg.rel_tol * prev.abs() {
                loglik.push(ll);
                converged = true;
                break;
            }
        }
        loglik.push(ll);
        model = mle_complete(&stats)?;
    }

    Ok(EmOutcome { model, loglik, converged })
}
