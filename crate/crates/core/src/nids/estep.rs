//! Inference for one port conditioned on a global trajectory.
//!
//! Given a path of G, the hidden chain H is a time-inhomogeneous chain whose
//! generator switches at every G transition, observed through a marked point
//! process: each toggle fires at its tied rate while H sits in an active
//! state. Filtering runs the usual normalized forward recursion where quiet
//! stretches evolve under the generator minus the total event intensity on
//! the diagonal and every observed event multiplies in its rate selector.
//! Smoothing adds the backward pass and per-interval outer-product integrals,
//! binned by the current G state so the M step can refit each conditional
//! intensity matrix.

use nalgebra::{DMatrix, DVector};

use super::model::{PortSubmodel, TrafficModel};
use super::trace::EventKind;
use crate::ctmc::{expm, integrate_outer, SufficientStatistics, Trajectory};
use crate::{Error, Result};

/// Tolerance for events or path boundaries that miss the window edge by
/// floating-point re-rounding.
const EDGE_SLOP: f64 = 1e-9;

/// Expected statistics of one port, binned by the global state.
#[derive(Debug, Clone)]
pub struct SubmodelStats {
    /// Dwell and transition expectations of H while G sits in each state.
    pub h: Vec<SufficientStatistics>,
    /// Observed event count per toggle slot.
    pub events: [f64; 4],
}

impl SubmodelStats {
    pub fn zeros(n_g: usize, n_h: usize) -> Self {
        Self {
            h: (0..n_g).map(|_| SufficientStatistics::zeros(n_h)).collect(),
            events: [0.0; 4],
        }
    }

    pub fn add_scaled(&mut self, other: &SubmodelStats, w: f64) {
        for (mine, theirs) in self.h.iter_mut().zip(&other.h) {
            mine.add_scaled(theirs, w);
        }
        for (mine, theirs) in self.events.iter_mut().zip(&other.events) {
            *mine += w * theirs;
        }
    }

    /// Expected total dwell across hidden states and global bins.
    pub fn total_dwell(&self) -> f64 {
        self.h.iter().map(|s| s.t.sum()).sum()
    }

    /// Expected time the hidden chain spends in the given pair of states,
    /// pooled over global bins; the denominator of a tied toggle rate.
    pub fn active_dwell(&self, active: [usize; 2]) -> f64 {
        self.h.iter().map(|s| s.t[active[0]] + s.t[active[1]]).sum()
    }
}

/// Expected statistics for the whole model: the global chain plus each port.
#[derive(Debug, Clone)]
pub struct NidsEss {
    pub g: SufficientStatistics,
    pub ports: Vec<SubmodelStats>,
}

impl NidsEss {
    pub fn zeros(model: &TrafficModel) -> Self {
        Self {
            g: SufficientStatistics::zeros(model.n_g()),
            ports: model
                .submodels()
                .iter()
                .map(|_| SubmodelStats::zeros(model.n_g(), model.n_h()))
                .collect(),
        }
    }
}

/// Result of smoothing one port over one window.
#[derive(Debug, Clone)]
pub struct SubmodelEstep {
    /// log P(port events in the window | global path, entry distribution);
    /// negative infinity when the evidence has zero probability.
    pub loglik: f64,
    pub stats: SubmodelStats,
    /// Filtered distribution of H at the window end, for chaining windows.
    pub alpha_end: DVector<f64>,
}

/// Precomputed per-port matrices, shared across particles and windows.
pub(crate) struct SubEngine {
    n_g: usize,
    n_h: usize,
    /// Per global state: H generator with the total event intensity
    /// subtracted from the diagonal. Off-diagonals stay the raw rates.
    effective: Vec<DMatrix<f64>>,
    /// Per toggle slot: the state-dependent event rate.
    weights: Vec<DVector<f64>>,
}

impl SubEngine {
    pub(crate) fn new(sub: &PortSubmodel, n_g: usize) -> Self {
        let n_h = sub.n_h();
        let weights: Vec<DVector<f64>> =
            sub.toggles().iter().map(|t| t.weights(n_h)).collect();
        let lambda: DVector<f64> = weights.iter().fold(DVector::zeros(n_h), |acc, w| acc + w);
        let effective = (0..n_g)
            .map(|g| {
                let mut m = sub.h_cim(g).matrix().clone();
                for h in 0..n_h {
                    m[(h, h)] -= lambda[h];
                }
                m
            })
            .collect();
        Self {
            n_g,
            n_h,
            effective,
            weights,
        }
    }

    pub(crate) fn smooth(
        &self,
        g: &Trajectory,
        events: &[(f64, EventKind)],
        alpha0: Option<&DVector<f64>>,
    ) -> Result<SubmodelEstep> {
        let plan = build_plan(g, self.n_g, events)?;
        let out = run_plan(&self.effective, &self.weights, &plan, alpha0, true)?;
        let mut stats = SubmodelStats::zeros(self.n_g, self.n_h);
        if out.loglik.is_finite() {
            stats.h = out.bins;
            for &(_, kind) in events {
                stats.events[kind.index()] += 1.0;
            }
        }
        Ok(SubmodelEstep {
            loglik: out.loglik,
            stats,
            alpha_end: out.alpha_end,
        })
    }

    pub(crate) fn forward(
        &self,
        g: &Trajectory,
        events: &[(f64, EventKind)],
        alpha0: Option<&DVector<f64>>,
    ) -> Result<(f64, DVector<f64>)> {
        let plan = build_plan(g, self.n_g, events)?;
        let out = run_plan(&self.effective, &self.weights, &plan, alpha0, false)?;
        Ok((out.loglik, out.alpha_end))
    }
}

/// Exact conditional E step for one port: the likelihood of its events given
/// the global path, expected H statistics binned by global state, and the
/// filtered H distribution at the window end. `events` must fall inside the
/// path's time span; `alpha0` is the entry distribution of H (uniform when
/// absent). Zero-probability evidence yields a negative-infinite likelihood
/// and zeroed statistics rather than an error.
pub fn submodel_estep(
    sub: &PortSubmodel,
    n_g: usize,
    g: &Trajectory,
    events: &[(f64, EventKind)],
    alpha0: Option<&DVector<f64>>,
) -> Result<SubmodelEstep> {
    SubEngine::new(sub, n_g).smooth(g, events, alpha0)
}

/// One step of the inference plan: evolve quietly under a global state, or
/// absorb one observed event.
pub(crate) enum Step {
    Evolve { dt: f64, g: usize },
    Hit { kind: usize },
}

/// Interleave the global path's segments with the observed events.
pub(crate) fn build_plan(
    g: &Trajectory,
    n_g: usize,
    events: &[(f64, EventKind)],
) -> Result<Vec<Step>> {
    let t0 = g.start();
    let t1 = g.end();
    for pair in events.windows(2) {
        if pair[1].0 < pair[0].0 {
            return Err(Error::InvalidEvidence(format!(
                "events out of order at t = {}",
                pair[1].0
            )));
        }
    }
    if let (Some(first), Some(last)) = (events.first(), events.last()) {
        if first.0 < t0 - EDGE_SLOP || last.0 > t1 + EDGE_SLOP {
            return Err(Error::InvalidEvidence(format!(
                "events span [{}, {}] outside the global path's window [{t0}, {t1}]",
                first.0, last.0
            )));
        }
    }
    let segs = g.segments();
    let mut plan = Vec::with_capacity(2 * events.len() + segs.len());
    let mut e = 0;
    let mut clock = t0;
    for (si, &(state, dwell)) in segs.iter().enumerate() {
        if state >= n_g {
            return Err(Error::InvalidEvidence(format!(
                "global path visits state {state}, chain has {n_g}"
            )));
        }
        let last_seg = si + 1 == segs.len();
        let seg_end = if last_seg { t1 } else { clock + dwell };
        let cutoff = if last_seg { seg_end + EDGE_SLOP } else { seg_end };
        while e < events.len() && events[e].0 <= cutoff {
            let te = events[e].0.clamp(clock, seg_end);
            if te > clock {
                plan.push(Step::Evolve {
                    dt: te - clock,
                    g: state,
                });
                clock = te;
            }
            plan.push(Step::Hit {
                kind: events[e].1.index(),
            });
            e += 1;
        }
        if seg_end > clock {
            plan.push(Step::Evolve {
                dt: seg_end - clock,
                g: state,
            });
        }
        clock = seg_end;
    }
    Ok(plan)
}

pub(crate) struct RunOutput {
    pub loglik: f64,
    pub alpha_end: DVector<f64>,
    /// Per generator index: expected dwell (diagonal source) and transitions.
    /// Empty unless smoothing ran to completion.
    pub bins: Vec<SufficientStatistics>,
}

/// Forward (and optionally backward) pass over a plan. `effective` holds one
/// emission-discounted generator per bin; `weights` one event-rate selector
/// per mark. The likelihood is exact; statistics come from per-interval
/// normalized outer-product integrals, so their dwell total is exactly the
/// plan's time span.
pub(crate) fn run_plan(
    effective: &[DMatrix<f64>],
    weights: &[DVector<f64>],
    plan: &[Step],
    alpha0: Option<&DVector<f64>>,
    smooth: bool,
) -> Result<RunOutput> {
    let n = effective[0].nrows();
    let uniform = DVector::from_element(n, 1.0 / n as f64);
    let mut alpha = match alpha0 {
        Some(v) => {
            if v.len() != n || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument(
                    "entry distribution must be nonnegative and match the state count".into(),
                ));
            }
            let s = v.sum();
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("entry distribution sums to zero".into()));
            }
            v / s
        }
        None => uniform.clone(),
    };

    let collapsed = |out_bins: Vec<SufficientStatistics>| RunOutput {
        loglik: f64::NEG_INFINITY,
        alpha_end: uniform.clone(),
        bins: out_bins,
    };

    let mut loglik = 0.0;
    let mut props: Vec<Option<DMatrix<f64>>> = Vec::new();
    let mut a_nodes: Vec<DVector<f64>> = Vec::new();
    if smooth {
        props.reserve(plan.len());
        a_nodes.reserve(plan.len() + 1);
        a_nodes.push(alpha.clone());
    }
    for step in plan {
        match step {
            Step::Evolve { dt, g } => {
                let p = expm(&(&effective[*g] * *dt))?;
                alpha = p.tr_mul(&alpha);
                if smooth {
                    props.push(Some(p));
                }
            }
            Step::Hit { kind } => {
                alpha.component_mul_assign(&weights[*kind]);
                if smooth {
                    props.push(None);
                }
            }
        }
        let s = alpha.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Ok(collapsed(Vec::new()));
        }
        alpha /= s;
        loglik += s.ln();
        if smooth {
            a_nodes.push(alpha.clone());
        }
    }
    if !smooth {
        return Ok(RunOutput {
            loglik,
            alpha_end: alpha,
            bins: Vec::new(),
        });
    }

    // Backward values at every node; b_nodes[k] covers the steps from k on.
    let mut b_nodes = vec![DVector::from_element(n, 1.0); plan.len() + 1];
    for (k, step) in plan.iter().enumerate().rev() {
        let mut b = match step {
            Step::Evolve { .. } => props[k].as_ref().unwrap() * &b_nodes[k + 1],
            Step::Hit { kind } => b_nodes[k + 1].component_mul(&weights[*kind]),
        };
        let s = b.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Ok(collapsed(Vec::new()));
        }
        b /= s;
        b_nodes[k] = b;
    }

    let mut bins: Vec<SufficientStatistics> =
        effective.iter().map(|m| SufficientStatistics::zeros(m.nrows())).collect();
    for (k, step) in plan.iter().enumerate() {
        let Step::Evolve { dt, g } = step else {
            continue;
        };
        let integral = integrate_outer(&effective[*g], &a_nodes[k], &b_nodes[k + 1], *dt)?;
        let stats = &mut bins[*g];
        for x in 0..n {
            stats.t[x] += integral[(x, x)];
            for y in 0..n {
                if y != x {
                    // Off-diagonals of the effective matrix are the raw rates.
                    stats.m[(x, y)] += effective[*g][(x, y)] * integral[(x, y)];
                }
            }
        }
    }
    Ok(RunOutput {
        loglik,
        alpha_end: alpha,
        bins,
    })
}
