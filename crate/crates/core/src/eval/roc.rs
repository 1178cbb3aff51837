//! Window labeling and threshold-sweep ROC curves.

use crate::nids::WindowScore;
use crate::synth::GroundTruth;
use crate::{Error, Result};

/// Which end of the score axis flags an anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Low scores are anomalous (likelihoods).
    LowIsAnomalous,
    /// High scores are anomalous (counts).
    HighIsAnomalous,
}

/// Pair each scored window with its ground-truth label: abnormal when the
/// half-open window intersects any injected interval. Skipped windows are
/// excluded.
pub fn label_windows(truth: &GroundTruth, windows: &[WindowScore]) -> Vec<(f64, bool)> {
    windows
        .iter()
        .filter(|w| !w.skipped)
        .map(|w| (w.loglik, truth.overlaps(w.start, w.start + w.length)))
        .collect()
}

/// One ROC curve: threshold-sweep points from (0,0) to (1,1) and the area
/// under them.
#[derive(Debug, Clone)]
pub struct RocResult {
    /// (false positive rate, true positive rate), threshold loosening left
    /// to right; tied scores move as one block.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweep every threshold over the scores and integrate the curve by
/// trapezoids; tied scores shift in one step, which averages their order.
/// Labels mark anomalies as true. Needs both classes present.
pub fn roc_auc(scores: &[f64], labels: &[bool], polarity: Polarity) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores must not be NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "need both classes to draw a curve, got {pos} anomalous and {neg} normal"
        )));
    }

    // Orient so larger oriented score = more anomalous, then sweep the
    // threshold from strictest to loosest.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let oriented = |i: usize| match polarity {
        Polarity::HighIsAnomalous => scores[i],
        Polarity::LowIsAnomalous => -scores[i],
    };
    order.sort_by(|&a, &b| oriented(b).total_cmp(&oriented(a)));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let here = oriented(order[i]);
        while i < order.len() && oriented(order[i]) == here {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RocResult { points, auc })
}
