//! Sequence-mismatch scoring over flattened call streams.
//!
//! Training memorizes every window of k consecutive calls seen in normal
//! traces. Scoring slides a frame of h consecutive windows over a test
//! stream and reports the worst frame's count of windows the database has
//! never seen. A stream with fewer windows than a frame is scored as one
//! frame; a stream shorter than one window scores zero.

use std::collections::HashSet;

use super::trace::ProcessTrace;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct StideDb {
    k: usize,
    grams: HashSet<Vec<String>>,
}

impl StideDb {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of distinct windows memorized.
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }
}

/// Memorize every length-k call window from the given traces.
pub fn stide_train(traces: &[ProcessTrace], k: usize) -> Result<StideDb> {
    if k == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    let mut grams = HashSet::new();
    for trace in traces {
        let calls = owned_calls(trace);
        for w in calls.windows(k) {
            if !grams.contains(w) {
                grams.insert(w.to_vec());
            }
        }
    }
    Ok(StideDb { k, grams })
}

/// Worst-frame novelty count for one trace: the maximum, over frames of
/// `frame` consecutive windows, of windows absent from the database.
pub fn stide_score(db: &StideDb, trace: &ProcessTrace, frame: usize) -> Result<usize> {
    if frame == 0 {
        return Err(Error::InvalidArgument("frame length must be positive".into()));
    }
    let calls = owned_calls(trace);
    if calls.len() < db.k {
        return Ok(0);
    }
    let novel: Vec<usize> = calls
        .windows(db.k)
        .map(|w| usize::from(!db.grams.contains(w)))
        .collect();
    if novel.len() <= frame {
        return Ok(novel.iter().sum());
    }
    let mut cur: usize = novel[..frame].iter().sum();
    let mut best = cur;
    for i in frame..novel.len() {
        cur += novel[i];
        cur -= novel[i - frame];
        best = best.max(cur);
    }
    Ok(best)
}

fn owned_calls(trace: &ProcessTrace) -> Vec<String> {
    trace.flat_calls().iter().map(|s| s.to_string()).collect()
}
