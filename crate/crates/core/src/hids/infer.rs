//! Likelihood, smoothing, and EM over process traces.
//!
//! A trace becomes an alternating plan of call batches and quiet gaps. The
//! forward pass scales messages per segment and accumulates the log mass;
//! smoothing runs the matching backward pass and integrates posterior outer
//! products segment by segment, folding the auxiliary batch chains back onto
//! the hidden state to collect dwell times, hidden transitions, and per-call
//! emission counts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::model::SyscallModel;
use super::spike::{spike_backward, spike_forward, spike_from_indices, SpikeGenerator};
use super::trace::ProcessTrace;
use crate::ctmc::{integrate_outer, mle_complete, SufficientStatistics};
use crate::ctmc::PSEUDO_COUNT;
use crate::{Error, Result};

/// Batches longer than this are cut into consecutive sub-batches sharing the
/// tick's resolution unit, bounding the auxiliary chain's size.
const SPIKE_CHUNK: usize = 200;

enum Seg {
    Spike { gen: SpikeGenerator, dt: f64 },
    Quiet { dt: f64 },
}

struct TracePlan {
    segs: Vec<Seg>,
}

fn build_plan(model: &SyscallModel, trace: &ProcessTrace) -> Result<TracePlan> {
    let dt = trace.resolution();
    let ticks = trace.ticks();
    let mut segs = Vec::with_capacity(2 * ticks.len());
    for (i, tick) in ticks.iter().enumerate() {
        let idx = tick
            .calls
            .iter()
            .map(|c| model.call_index(c))
            .collect::<Result<Vec<_>>>()?;
        if idx.is_empty() {
            // A tick with no calls is pure quiet for one resolution unit.
            segs.push(Seg::Quiet { dt });
        } else {
            let pieces: Vec<&[usize]> = idx.chunks(SPIKE_CHUNK).collect();
            let sub = dt / pieces.len() as f64;
            for piece in pieces {
                segs.push(Seg::Spike {
                    gen: spike_from_indices(model, piece.to_vec())?,
                    dt: sub,
                });
            }
        }
        if i + 1 < ticks.len() {
            segs.push(Seg::Quiet {
                dt: (ticks[i + 1].time - tick.time - dt).max(0.0),
            });
        }
    }
    Ok(TracePlan { segs })
}

/// Forward pass over a plan: per-segment scaled messages and the summed log
/// mass. A collapse returns minus infinity with a uniform end message.
fn forward(
    model: &SyscallModel,
    plan: &TracePlan,
    alpha0: Option<&DVector<f64>>,
) -> Result<(f64, DVector<f64>)> {
    let m = model.m();
    let uniform = DVector::from_element(m, 1.0 / m as f64);
    let mut alpha = match alpha0 {
        Some(a) => {
            let s = a.sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(
                    "initial distribution must have positive finite mass".into(),
                ));
            }
            a / s
        }
        None => uniform.clone(),
    };
    let mut loglik = 0.0;
    for seg in &plan.segs {
        let next = match seg {
            Seg::Spike { gen, dt } => spike_forward(&alpha, gen, *dt)?,
            Seg::Quiet { dt } => quiet_matrix_forward(model, &alpha, *dt)?,
        };
        let s = next.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Ok((f64::NEG_INFINITY, uniform));
        }
        loglik += s.ln();
        alpha = next / s;
    }
    Ok((loglik, alpha))
}

fn quiet_matrix_forward(model: &SyscallModel, alpha: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    if dt == 0.0 {
        return Ok(alpha.clone());
    }
    let e = crate::ctmc::expm(&(model.quiet_generator() * dt))?;
    Ok(e.tr_mul(alpha))
}

/// Log-likelihood of one process under the model, from a uniform initial
/// hidden distribution. An impossible trace yields minus infinity.
pub fn process_loglik(model: &SyscallModel, trace: &ProcessTrace) -> Result<f64> {
    let plan = build_plan(model, trace)?;
    Ok(forward(model, &plan, None)?.0)
}

/// Expected sufficient statistics of the hidden chain and its emissions.
#[derive(Debug, Clone)]
pub struct HidsEss {
    /// Hidden-state dwell times and transitions.
    pub h: SufficientStatistics,
    /// emissions[(s, h)] = expected count of call s fired in hidden state h.
    pub emissions: DMatrix<f64>,
}

impl HidsEss {
    pub fn zeros(model: &SyscallModel) -> Self {
        Self {
            h: SufficientStatistics::zeros(model.m()),
            emissions: DMatrix::zeros(model.vocab().len(), model.m()),
        }
    }

    fn merge(&mut self, other: &HidsEss) {
        self.h.add_scaled(&other.h, 1.0);
        self.emissions += &other.emissions;
    }
}

/// Exact E step over a batch of traces: total log-likelihood plus expected
/// statistics, additive across traces. Traces are processed in parallel.
pub fn hids_estep(model: &SyscallModel, traces: &[ProcessTrace]) -> Result<(f64, HidsEss)> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces".into()));
    }
    let parts: Vec<Result<(f64, HidsEss)>> = traces
        .par_iter()
        .map(|t| trace_estep(model, t))
        .collect();
    let mut loglik = 0.0;
    let mut ess = HidsEss::zeros(model);
    for part in parts {
        let (ll, e) = part?;
        loglik += ll;
        ess.merge(&e);
    }
    Ok((loglik, ess))
}

fn trace_estep(model: &SyscallModel, trace: &ProcessTrace) -> Result<(f64, HidsEss)> {
    let m = model.m();
    let plan = build_plan(model, trace)?;
    let n_seg = plan.segs.len();

    // Forward sweep, keeping the scaled message entering every segment.
    let mut alphas = Vec::with_capacity(n_seg);
    let mut alpha = DVector::from_element(m, 1.0 / m as f64);
    let mut loglik = 0.0;
    for seg in &plan.segs {
        alphas.push(alpha.clone());
        let next = match seg {
            Seg::Spike { gen, dt } => spike_forward(&alpha, gen, *dt)?,
            Seg::Quiet { dt } => quiet_matrix_forward(model, &alpha, *dt)?,
        };
        let s = next.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::ImpossibleEvidence);
        }
        loglik += s.ln();
        alpha = next / s;
    }

    // Backward sweep with per-segment statistics.
    let q_hat = model.quiet_generator();
    let mut ess = HidsEss::zeros(model);
    let mut beta = DVector::from_element(m, 1.0);
    for (seg, alpha) in plan.segs.iter().zip(&alphas).rev() {
        match seg {
            Seg::Quiet { dt } => {
                let integral = integrate_outer(&q_hat, alpha, &beta, *dt)?;
                fold_hidden(&mut ess.h, &q_hat, &integral, 0, m);
                if *dt > 0.0 {
                    let e = crate::ctmc::expm(&(&q_hat * *dt))?;
                    beta = &e * &beta;
                }
            }
            Seg::Spike { gen, dt } => {
                let k = gen.k();
                let mut a_emb = DVector::zeros(m * (k + 1));
                a_emb.rows_mut(0, m).copy_from(alpha);
                let mut b_emb = DVector::zeros(m * (k + 1));
                b_emb.rows_mut(k * m, m).copy_from(&beta);
                let integral = integrate_outer(gen.q_x(), &a_emb, &b_emb, *dt)?;
                for b in 0..=k {
                    fold_hidden(&mut ess.h, &q_hat, &integral, b * m, m);
                }
                for (b, &s) in gen.calls().iter().enumerate() {
                    for h in 0..m {
                        let from = b * m + h;
                        let to = (b + 1) * m + h;
                        ess.emissions[(s, h)] += gen.q_x()[(from, to)] * integral[(from, to)];
                    }
                }
                beta = spike_backward(&beta, gen, *dt)?;
            }
        }
        let s = beta.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::ImpossibleEvidence);
        }
        beta /= s;
    }
    Ok((loglik, ess))
}

/// Add one block's worth of posterior dwell and hidden-transition mass.
fn fold_hidden(
    stats: &mut SufficientStatistics,
    q_hat: &DMatrix<f64>,
    integral: &DMatrix<f64>,
    offset: usize,
    m: usize,
) {
    for x in 0..m {
        stats.t[x] += integral[(offset + x, offset + x)];
        for y in 0..m {
            if y != x {
                stats.m[(x, y)] += q_hat[(x, y)] * integral[(offset + x, offset + y)];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HidsEmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood improvement falls below this.
    pub rel_tol: f64,
}

impl Default for HidsEmConfig {
    fn default() -> Self {
        Self { max_iters: 50, rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct HidsEmOutcome {
    pub model: SyscallModel,
    /// Log-likelihood at the start of each iteration; non-decreasing since
    /// the E step is exact.
    pub loglik: Vec<f64>,
    pub converged: bool,
}

/// Closed-form M step from expected statistics, with the usual small
/// pseudo-counts so unvisited states and silent calls keep positive rates.
pub fn hids_mstep(model: &SyscallModel, ess: &HidsEss) -> Result<SyscallModel> {
    let q_h = mle_complete(&ess.h)?;
    let rates = DMatrix::from_fn(model.vocab().len(), model.m(), |s, h| {
        (ess.emissions[(s, h)] + PSEUDO_COUNT) / (ess.h.t[h] + PSEUDO_COUNT)
    });
    SyscallModel::new(model.vocab().to_vec(), q_h, rates)
}

/// Exact EM from `init`: alternate the smoothing E step with the closed-form
/// M step until the improvement falls under the tolerance.
pub fn hids_em(
    init: &SyscallModel,
    traces: &[ProcessTrace],
    cfg: &HidsEmConfig,
) -> Result<HidsEmOutcome> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let mut model = init.clone();
    let mut loglik: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let (ll, ess) = hids_estep(&model, traces)?;
        if let Some(&prev) = loglik.last() {
            if ll - prev <= cfg.rel_tol * prev.abs() {
                loglik.push(ll);
                converged = true;
                break;
            }
        }
        loglik.push(ll);
        model = hids_mstep(&model, &ess)?;
    }
    Ok(HidsEmOutcome { model, loglik, converged })
}
