//! Window-level anomaly scores for traffic traces.
//!
//! The trace is cut into fixed-length windows and each window gets the
//! model's log-likelihood of its events given everything before it, estimated
//! with the same particle system the trainer uses but running forward only.
//! Low scores mark windows the model finds surprising. A connection-counting
//! baseline shares the window bookkeeping so evaluations line up.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::estep::SubEngine;
use super::model::TrafficModel;
use super::rbpf::{systematic_resample, RbpfConfig};
use super::trace::{EventKind, TrafficTrace};
use crate::ctmc::sample_trajectory;
use crate::rng::{substream, substream_indexed};
use crate::{Error, Result};

/// Score for one window of a trace.
#[derive(Debug, Clone)]
pub struct WindowScore {
    /// Window start time in seconds.
    pub start: f64,
    /// Window length in seconds; the last window may be shorter.
    pub length: f64,
    /// Estimated log-likelihood of the window's events given the past, or
    /// the baseline's raw statistic. Minus infinity marks a window the model
    /// cannot explain at all.
    pub loglik: f64,
    /// Number of trace events inside the window.
    pub events: usize,
    /// True when the window holds no events at all.
    pub skipped: bool,
}

struct ScoreSlot {
    g_state: Option<usize>,
    alphas: Vec<DVector<f64>>,
    rng: rand_chacha::ChaCha12Rng,
}

struct WindowStep {
    dll: f64,
    g_end: usize,
    alphas: Vec<DVector<f64>>,
}

/// Cut `[0, horizon)` into windows of `window_seconds` and estimate each
/// window's conditional log-likelihood under the model. The final window is
/// truncated at the horizon and keeps events landing exactly on it. Windows
/// with no events still get a score (an empty stretch is evidence too) and
/// particles keep propagating through them.
pub fn score_windows(
    model: &TrafficModel,
    trace: &TrafficTrace,
    window_seconds: f64,
    cfg: &RbpfConfig,
) -> Result<Vec<WindowScore>> {
    if !(window_seconds > 0.0) || !window_seconds.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "window length must be positive, got {window_seconds}"
        )));
    }
    if cfg.particles < 1 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    let n_g = model.n_g();
    let horizon = trace.horizon();
    let (routed, _dropped) = model.split_events(trace);
    let engines: Vec<SubEngine> = model
        .submodels()
        .iter()
        .map(|s| SubEngine::new(s, n_g))
        .collect();

    let m = cfg.particles;
    let uniform_h = DVector::from_element(model.n_h(), 1.0 / model.n_h() as f64);
    let mut slots: Vec<ScoreSlot> = (0..m)
        .map(|i| ScoreSlot {
            g_state: None,
            alphas: vec![uniform_h.clone(); engines.len()],
            rng: substream_indexed(cfg.seed, "nids.score.particle", i as u64),
        })
        .collect();
    let mut resample_rng = substream(cfg.seed, "nids.score.resample");

    let mut out = Vec::new();
    let mut start = 0.0;
    let mut k = 0u64;
    while start < horizon {
        let end = ((k + 1) as f64 * window_seconds).min(horizon);
        let closing = end >= horizon;
        let events = trace.events_between(start, end, closing).len();
        let slices: Vec<&[(f64, EventKind)]> = routed
            .iter()
            .map(|ev| {
                let a = ev.partition_point(|&(t, _)| t < start);
                let b = if closing {
                    ev.partition_point(|&(t, _)| t <= end)
                } else {
                    ev.partition_point(|&(t, _)| t < end)
                };
                &ev[a..b]
            })
            .collect();

        let results: Vec<Result<WindowStep>> = slots
            .par_iter_mut()
            .map(|slot| {
                let init: Vec<f64> = match slot.g_state {
                    Some(s) => (0..n_g).map(|i| if i == s { 1.0 } else { 0.0 }).collect(),
                    None => vec![1.0; n_g],
                };
                let g_path =
                    sample_trajectory(model.g(), &init, start, end - start, &mut slot.rng)?;
                let mut dll = 0.0;
                let mut alphas = Vec::with_capacity(engines.len());
                for (p, engine) in engines.iter().enumerate() {
                    let (ll, alpha_end) =
                        engine.forward(&g_path, slices[p], Some(&slot.alphas[p]))?;
                    dll += ll;
                    alphas.push(alpha_end);
                }
                Ok(WindowStep {
                    dll,
                    g_end: g_path.segments().last().unwrap().0,
                    alphas,
                })
            })
            .collect();
        let steps = results.into_iter().collect::<Result<Vec<_>>>()?;

        let max = steps.iter().map(|s| s.dll).fold(f64::NEG_INFINITY, f64::max);
        let loglik;
        if max.is_finite() {
            let ws: Vec<f64> = steps.iter().map(|s| (s.dll - max).exp()).collect();
            let wsum: f64 = ws.iter().sum();
            loglik = max + (wsum / m as f64).ln();
            let ancestors = systematic_resample(&ws, resample_rng.gen::<f64>());
            let picked: Vec<(usize, Vec<DVector<f64>>)> = ancestors
                .iter()
                .map(|&a| (steps[a].g_end, steps[a].alphas.clone()))
                .collect();
            for (slot, (g_end, alphas)) in slots.iter_mut().zip(picked) {
                slot.g_state = Some(g_end);
                slot.alphas = alphas;
            }
        } else {
            // Nothing explains this window. Record that, keep each particle's
            // own continuation (the collapsed ports were reset to a uniform
            // filter) and move on rather than aborting the whole trace.
            loglik = f64::NEG_INFINITY;
            for (slot, step) in slots.iter_mut().zip(steps) {
                slot.g_state = Some(step.g_end);
                slot.alphas = step.alphas;
            }
        }
        out.push(WindowScore {
            start,
            length: end - start,
            loglik,
            events,
            skipped: events == 0,
        });
        start = end;
        k += 1;
    }
    Ok(out)
}

/// Baseline detector: the score of a window is its count of connection
/// openings. Uses the same window partition and skip bookkeeping as the
/// model scorer so the two can be evaluated on identical windows. Higher
/// counts are the suspicious direction here, the opposite polarity of a
/// log-likelihood.
pub fn connection_count_baseline(trace: &TrafficTrace, window_seconds: f64) -> Result<Vec<WindowScore>> {
    if !(window_seconds > 0.0) || !window_seconds.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "window length must be positive, got {window_seconds}"
        )));
    }
    let horizon = trace.horizon();
    let mut out = Vec::new();
    let mut start = 0.0;
    let mut k = 0u64;
    while start < horizon {
        let end = ((k + 1) as f64 * window_seconds).min(horizon);
        let window = trace.events_between(start, end, end >= horizon);
        let opens = window
            .iter()
            .filter(|e| e.kind == EventKind::ConnOpen)
            .count();
        out.push(WindowScore {
            start,
            length: end - start,
            loglik: opens as f64,
            events: window.len(),
            skipped: window.is_empty(),
        });
        start = end;
        k += 1;
    }
    Ok(out)
}
