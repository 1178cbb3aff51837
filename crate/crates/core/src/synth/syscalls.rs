//! Synthetic system-call streams: exact-time sampling from a syscall model,
//! then quantization onto the recording clock.

use rand::Rng;
use rayon::prelude::*;

use crate::hids::{ProcessTrace, SyscallModel, Tick};
use crate::rng::{sample_exp, substream_indexed};
use crate::{Error, Result};

/// Sample one process trace per index. Each process runs for a horizon drawn
/// uniformly within 25% of `mean_horizon`; call timestamps are floored onto
/// the `resolution` grid with within-tick order preserved. A process whose
/// sample fires nothing becomes a single empty tick at time zero.
pub fn gen_syscalls(
    model: &SyscallModel,
    n_processes: usize,
    mean_horizon: f64,
    resolution: f64,
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<ProcessTrace>> {
    if n_processes == 0 {
        return Err(Error::InvalidArgument("need at least one process".into()));
    }
    if !(mean_horizon > 0.0) || !mean_horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mean horizon must be positive and finite, got {mean_horizon}"
        )));
    }
    (0..n_processes)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream_indexed(seed, "synth.syscalls.process", i as u64);
            let horizon = mean_horizon * rng.gen_range(0.75..1.25);
            let calls = sample_call_times(model, horizon, &mut rng);
            let mut ticks = quantize(&calls, model.vocab(), resolution);
            if ticks.is_empty() {
                ticks.push(Tick { time: 0.0, calls: Vec::new() });
            }
            ProcessTrace::new(format!("{id_prefix}{i}"), ticks, resolution)
        })
        .collect()
}

/// Competing exponential clocks over the hidden chain and the call streams:
/// exact call times with their vocabulary indices, in order.
pub(crate) fn sample_call_times<R: Rng>(
    model: &SyscallModel,
    horizon: f64,
    rng: &mut R,
) -> Vec<(f64, usize)> {
    let m = model.m();
    let mut h = rng.gen_range(0..m);
    let mut t = 0.0;
    let mut calls = Vec::new();
    loop {
        let h_exit = model.q_h().exit_rate(h);
        let call_total = model.total_rate(h);
        t += sample_exp(rng, h_exit + call_total);
        if t >= horizon {
            return calls;
        }
        let u: f64 = rng.gen_range(0.0..h_exit + call_total);
        if u < call_total {
            let mut acc = 0.0;
            let mut fired = model.vocab().len() - 1;
            for s in 0..model.vocab().len() {
                acc += model.rate(s, h);
                if u < acc {
                    fired = s;
                    break;
                }
            }
            calls.push((t, fired));
        } else {
            let mut v = u - call_total;
            for y in 0..m {
                if y == h {
                    continue;
                }
                let r = model.q_h().rate(h, y);
                if v < r {
                    h = y;
                    break;
                }
                v -= r;
            }
        }
    }
}

/// Floor each timestamp to the clock grid and group runs sharing a stamp
/// into one tick, preserving order.
pub(crate) fn quantize(calls: &[(f64, usize)], vocab: &[String], resolution: f64) -> Vec<Tick> {
    let mut ticks: Vec<Tick> = Vec::new();
    for &(t, s) in calls {
        let stamp = (t / resolution).floor() * resolution;
        let name = vocab[s].clone();
        match ticks.last_mut() {
            Some(last) if last.time == stamp => last.calls.push(name),
            _ => ticks.push(Tick { time: stamp, calls: vec![name] }),
        }
    }
    ticks
}
