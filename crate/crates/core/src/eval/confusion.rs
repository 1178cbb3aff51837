//! Host identification: assign each trace segment to the model that scores
//! it highest and tabulate the assignments per true owner.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Row i, column j: the fraction of segments truly from host i that model j
/// scored highest. Ties go to the lowest model index; rows sum to one.
pub fn confusion_matrix(
    segment_loglik: &[Vec<f64>],
    owner: &[usize],
    n_models: usize,
) -> Result<DMatrix<f64>> {
    if n_models == 0 {
        return Err(Error::InvalidArgument("no models to assign to".into()));
    }
    if segment_loglik.len() != owner.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score rows for {} owners",
            segment_loglik.len(),
            owner.len()
        )));
    }
    let mut counts = DMatrix::<f64>::zeros(n_models, n_models);
    let mut owned = vec![0usize; n_models];
    for (row, (scores, &host)) in segment_loglik.iter().zip(owner).enumerate() {
        if host >= n_models {
            return Err(Error::InvalidArgument(format!(
                "segment {row} claims host {host}, have {n_models}"
            )));
        }
        if scores.len() != n_models {
            return Err(Error::InvalidArgument(format!(
                "segment {row} has {} scores for {n_models} models",
                scores.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument(format!("segment {row} has a NaN score")));
        }
        let mut best = 0;
        for j in 1..n_models {
            if scores[j] > scores[best] {
                best = j;
            }
        }
        counts[(host, best)] += 1.0;
        owned[host] += 1;
    }
    for (i, &n) in owned.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidArgument(format!("host {i} has no segments")));
        }
        for j in 0..n_models {
            counts[(i, j)] /= n as f64;
        }
    }
    Ok(counts)
}
