//! Propagation through call batches and quiet gaps.
//!
//! A batch of k ordered calls recorded at one tick is pushed through an
//! auxiliary chain whose state is (hidden state, number of calls completed):
//! within a completion level the hidden state moves freely with all call
//! intensity drained from the diagonal, and the only way up is the next call
//! in the sequence, at its per-state rate. Starting mass at level zero and
//! reading level k after one resolution unit conditions on exactly that
//! batch. Gaps propagate with the drained generator alone.

use nalgebra::{DMatrix, DVector};

use super::model::SyscallModel;
use crate::ctmc::expm;
use crate::{Error, Result};

/// The auxiliary generator for one ordered call batch.
#[derive(Debug, Clone)]
pub struct SpikeGenerator {
    m: usize,
    calls: Vec<usize>,
    q_x: DMatrix<f64>,
}

impl SpikeGenerator {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of calls in the batch.
    pub fn k(&self) -> usize {
        self.calls.len()
    }

    /// Vocabulary indices of the batch, in order.
    pub fn calls(&self) -> &[usize] {
        &self.calls
    }

    pub fn q_x(&self) -> &DMatrix<f64> {
        &self.q_x
    }
}

/// Build the auxiliary generator for the ordered batch `calls`.
pub fn build_spike_generator(model: &SyscallModel, calls: &[String]) -> Result<SpikeGenerator> {
    let idx = calls
        .iter()
        .map(|c| model.call_index(c))
        .collect::<Result<Vec<_>>>()?;
    spike_from_indices(model, idx)
}

pub(crate) fn spike_from_indices(model: &SyscallModel, calls: Vec<usize>) -> Result<SpikeGenerator> {
    let k = calls.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "a call batch needs at least one call".into(),
        ));
    }
    let m = model.m();
    if let Some(&s) = calls.iter().find(|&&s| s >= model.vocab().len()) {
        return Err(Error::InvalidArgument(format!(
            "call index {s} outside the vocabulary of {}",
            model.vocab().len()
        )));
    }
    let q_hat = model.quiet_generator();
    let dim = m * (k + 1);
    let mut q_x = DMatrix::zeros(dim, dim);
    for b in 0..=k {
        q_x.view_mut((b * m, b * m), (m, m)).copy_from(&q_hat);
    }
    for (b, &s) in calls.iter().enumerate() {
        for h in 0..m {
            q_x[(b * m + h, (b + 1) * m + h)] = model.rate(s, h);
        }
    }
    Ok(SpikeGenerator { m, calls, q_x })
}

/// Push `alpha` through the batch over one resolution unit: embed at
/// completion level zero, run the auxiliary chain for `dt`, read level k.
/// The result is unnormalized; its sum is the batch's probability mass.
pub fn spike_forward(alpha: &DVector<f64>, gen: &SpikeGenerator, dt: f64) -> Result<DVector<f64>> {
    check_alpha(alpha, gen.m)?;
    check_dt(dt)?;
    let e = expm(&(&gen.q_x * dt))?;
    let k = gen.k();
    // alpha occupies block 0, so alpha^T e restricted to the last block only
    // needs e's top-right block.
    let corner = e.view((0, k * gen.m), (gen.m, gen.m));
    Ok(corner.tr_mul(alpha))
}

/// Backward counterpart: the likelihood of the batch and everything after it,
/// seen from the start of the tick. Embeds `beta` at completion level k and
/// reads level zero.
pub(crate) fn spike_backward(
    beta: &DVector<f64>,
    gen: &SpikeGenerator,
    dt: f64,
) -> Result<DVector<f64>> {
    check_alpha(beta, gen.m)?;
    check_dt(dt)?;
    let e = expm(&(&gen.q_x * dt))?;
    let corner = e.view((0, gen.k() * gen.m), (gen.m, gen.m));
    Ok(&corner * beta)
}

/// Propagate over an eventless stretch: `alpha` times the exponential of the
/// drained generator. Mass only shrinks; the loss is the probability some
/// call would have fired.
pub fn quiet_forward(alpha: &DVector<f64>, model: &SyscallModel, delta: f64) -> Result<DVector<f64>> {
    check_alpha(alpha, model.m())?;
    check_dt(delta)?;
    let e = expm(&(model.quiet_generator() * delta))?;
    Ok(e.tr_mul(alpha))
}

fn check_alpha(alpha: &DVector<f64>, m: usize) -> Result<()> {
    if alpha.len() != m {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} entries, the model has {m} hidden states",
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distribution entries must be finite and nonnegative, found {a}"
        )));
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "duration must be nonnegative and finite, got {dt}"
        )));
    }
    Ok(())
}
