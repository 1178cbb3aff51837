//! Particle-filter EM for the full traffic model.
//!
//! The global chain is marginalized by sampling: each particle carries a
//! forward-sampled G path, and everything below G is handled exactly by the
//! per-port smoothing engine, so a particle's weight over a span is the
//! product of its ports' conditional event likelihoods. Particles are
//! synchronized and systematically resampled at fixed span boundaries, and
//! expected statistics are weight-averaged across particles.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::estep::{NidsEss, SubEngine, SubmodelStats};
use super::model::{ToggleVariable, TrafficModel};
use super::trace::{EventKind, TrafficTrace};
use crate::ctmc::{
    mle_complete, sample_trajectory, suff_stats_complete, SufficientStatistics, PSEUDO_COUNT,
};
use crate::rng::{fold_seed, substream, substream_indexed};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RbpfConfig {
    pub particles: usize,
    /// Span length between particle synchronization points, in seconds.
    pub resample_every: f64,
    pub seed: u64,
}

impl Default for RbpfConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            resample_every: 50.0,
            seed: 0,
        }
    }
}

struct Slot {
    /// Global state at the start of the next span; None before the first.
    g_state: Option<usize>,
    /// Filtered hidden distribution per port.
    alphas: Vec<DVector<f64>>,
    rng: rand_chacha::ChaCha12Rng,
}

struct SpanResult {
    dll: f64,
    g_end: usize,
    g_stats: SufficientStatistics,
    ports: Vec<SubmodelStats>,
    alphas: Vec<DVector<f64>>,
}

/// Monte Carlo E step: estimated log-likelihood of the trace plus expected
/// statistics for the global chain and every port, weight-averaged over
/// particles. Fails with a degeneracy error if every particle's evidence
/// likelihood vanishes within a span.
pub fn rbpf_estep(
    model: &TrafficModel,
    trace: &TrafficTrace,
    cfg: &RbpfConfig,
) -> Result<(f64, NidsEss)> {
    if cfg.particles < 1 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if !(cfg.resample_every > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "span length must be positive, got {}",
            cfg.resample_every
        )));
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
    let mut slots: Vec<Slot> = (0..m)
        .map(|i| Slot {
            g_state: None,
            alphas: vec![uniform_h.clone(); engines.len()],
            rng: substream_indexed(cfg.seed, "nids.rbpf.particle", i as u64),
        })
        .collect();
    let mut resample_rng = substream(cfg.seed, "nids.rbpf.resample");

    let mut ess = NidsEss::zeros(model);
    let mut loglik = 0.0;
    let mut span_start = 0.0;
    while span_start < horizon {
        let span_end = (span_start + cfg.resample_every).min(horizon);
        let closing = span_end >= horizon;
        let slices: Vec<&[(f64, EventKind)]> = routed
            .iter()
            .map(|ev| {
                let a = ev.partition_point(|&(t, _)| t < span_start);
                let b = if closing {
                    ev.partition_point(|&(t, _)| t <= span_end)
                } else {
                    ev.partition_point(|&(t, _)| t < span_end)
                };
                &ev[a..b]
            })
            .collect();

        let results: Vec<Result<SpanResult>> = slots
            .par_iter_mut()
            .map(|slot| span_step(slot, model, &engines, &slices, span_start, span_end))
            .collect();
        let spans = results.into_iter().collect::<Result<Vec<_>>>()?;

        let max = spans.iter().map(|s| s.dll).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degeneracy);
        }
        let ws: Vec<f64> = spans.iter().map(|s| (s.dll - max).exp()).collect();
        let wsum: f64 = ws.iter().sum();
        loglik += max + (wsum / m as f64).ln();

        for (sp, &w) in spans.iter().zip(&ws) {
            let w = w / wsum;
            if w > 0.0 {
                ess.g.add_scaled(&sp.g_stats, w);
                for (acc, part) in ess.ports.iter_mut().zip(&sp.ports) {
                    acc.add_scaled(part, w);
                }
            }
        }

        let ancestors = systematic_resample(&ws, resample_rng.gen::<f64>());
        for (slot, &a) in slots.iter_mut().zip(&ancestors) {
            slot.g_state = Some(spans[a].g_end);
            slot.alphas = spans[a].alphas.clone();
        }
        span_start = span_end;
    }
    Ok((loglik, ess))
}

fn span_step(
    slot: &mut Slot,
    model: &TrafficModel,
    engines: &[SubEngine],
    slices: &[&[(f64, EventKind)]],
    span_start: f64,
    span_end: f64,
) -> Result<SpanResult> {
    let n_g = model.n_g();
    let init: Vec<f64> = match slot.g_state {
        Some(s) => (0..n_g).map(|i| if i == s { 1.0 } else { 0.0 }).collect(),
        None => vec![1.0; n_g],
    };
    let g_path = sample_trajectory(
        model.g(),
        &init,
        span_start,
        span_end - span_start,
        &mut slot.rng,
    )?;
    let mut dll = 0.0;
    let mut ports = Vec::with_capacity(engines.len());
    let mut alphas = Vec::with_capacity(engines.len());
    for (p, engine) in engines.iter().enumerate() {
        let out = engine.smooth(&g_path, slices[p], Some(&slot.alphas[p]))?;
        dll += out.loglik;
        ports.push(out.stats);
        alphas.push(out.alpha_end);
    }
    Ok(SpanResult {
        dll,
        g_end: g_path.segments().last().unwrap().0,
        g_stats: suff_stats_complete(&g_path, n_g)?,
        ports,
        alphas,
    })
}

/// Ancestor indices for systematic resampling: one uniform draw places m
/// evenly spaced pointers over the cumulative weights. Weights need not be
/// normalized; zero-weight particles get no offspring.
pub(crate) fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let m = weights.len();
    let total: f64 = weights.iter().sum();
    let step = total / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..m {
        let target = (k as f64 + u) * step;
        while cum < target && i + 1 < m {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Closed-form M step on expected statistics: the global and per-port
/// conditional intensity matrices by regularized rate estimation, and each
/// toggle's tied rate as its event count over the pooled expected time in
/// its two active states, with the same pseudo-count floor.
pub fn nids_mstep(model: &TrafficModel, ess: &NidsEss) -> Result<TrafficModel> {
    let g = mle_complete(&ess.g)?;
    let mut subs = Vec::with_capacity(model.submodels().len());
    for (p, sub) in model.submodels().iter().enumerate() {
        let stats = &ess.ports[p];
        let h_cims = stats
            .h
            .iter()
            .map(mle_complete)
            .collect::<Result<Vec<_>>>()?;
        let toggles = sub
            .toggles()
            .iter()
            .enumerate()
            .map(|(j, tog)| {
                let events = stats.events[j];
                let dwell = stats.active_dwell(tog.active());
                let rate = (events + PSEUDO_COUNT) / (dwell + PSEUDO_COUNT);
                ToggleVariable::new(tog.kind(), tog.active(), rate, model.n_h())
            })
            .collect::<Result<Vec<_>>>()?;
        subs.push(super::model::PortSubmodel::new(sub.port(), h_cims, toggles)?);
    }
    TrafficModel::new(g, subs)
}

#[derive(Debug, Clone)]
pub struct NidsEmConfig {
    pub iterations: usize,
    pub particles: usize,
    pub resample_every: f64,
    pub seed: u64,
}

impl Default for NidsEmConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            particles: 100,
            resample_every: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NidsEmOutcome {
    pub model: TrafficModel,
    /// Monte Carlo log-likelihood estimate per iteration, evaluated under
    /// the parameters entering that iteration. Not necessarily monotone.
    pub loglik_estimates: Vec<f64>,
}

/// Stochastic EM: alternate the particle-filter E step with the closed-form
/// M step. Each iteration draws a fresh particle system from a seed derived
/// from the master seed and the iteration index, so runs are reproducible.
pub fn rbpf_em(
    model: &TrafficModel,
    trace: &TrafficTrace,
    cfg: &NidsEmConfig,
) -> Result<NidsEmOutcome> {
    let mut current = model.clone();
    let mut loglik_estimates = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rc = RbpfConfig {
            particles: cfg.particles,
            resample_every: cfg.resample_every,
            seed: fold_seed(cfg.seed, "nids.em.iteration", it as u64),
        };
        let (ll, ess) = rbpf_estep(&current, trace, &rc)?;
        loglik_estimates.push(ll);
        current = nids_mstep(&current, &ess)?;
    }
    Ok(NidsEmOutcome {
        model: current,
        loglik_estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::IntensityMatrix;
    use crate::nids::exact::exact_estep;
    use crate::nids::model::{toggle_active_pair, PortKey, PortSubmodel};
    use crate::nids::trace::TrafficEvent;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn mat(n: usize, rows: &[f64]) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(n, n, rows)).unwrap()
    }

    fn toggles(n_h: usize, rates: [f64; 4]) -> Vec<ToggleVariable> {
        EventKind::ALL
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                ToggleVariable::new(k, toggle_active_pair(j, n_h), rates[j], n_h).unwrap()
            })
            .collect()
    }

    fn flat_model() -> TrafficModel {
        let g = mat(1, &[0.0]);
        let a = PortSubmodel::new(
            PortKey::Port(80),
            vec![mat(2, &[0.0, 0.9, 1.1, 0.0])],
            toggles(2, [0.5, 0.2, 0.3, 0.1]),
        )
        .unwrap();
        let b = PortSubmodel::new(
            PortKey::Port(22),
            vec![mat(2, &[0.0, 0.4, 0.6, 0.0])],
            toggles(2, [0.2, 0.6, 0.1, 0.3]),
        )
        .unwrap();
        TrafficModel::new(g, vec![a, b]).unwrap()
    }

    fn toy_trace() -> TrafficTrace {
        let events = vec![
            TrafficEvent { time: 3.0, port: 80, kind: EventKind::ConnOpen },
            TrafficEvent { time: 11.0, port: 22, kind: EventKind::PktIn },
            TrafficEvent { time: 26.0, port: 80, kind: EventKind::PktIn },
            TrafficEvent { time: 54.0, port: 22, kind: EventKind::PktOut },
            TrafficEvent { time: 61.0, port: 80, kind: EventKind::ConnClose },
            TrafficEvent { time: 88.0, port: 80, kind: EventKind::PktOut },
        ];
        TrafficTrace::new(events, 120.0).unwrap()
    }

    #[test]
    fn degenerate_global_chain_matches_the_exact_step_for_any_particle_count() {
        let model = flat_model();
        let trace = toy_trace();
        let (ll_exact, ess_exact) = exact_estep(&model, &trace).unwrap();
        for particles in [1, 7] {
            let cfg = RbpfConfig { particles, resample_every: 50.0, seed: 42 };
            let (ll, ess) = rbpf_estep(&model, &trace, &cfg).unwrap();
            assert_abs_diff_eq!(ll, ll_exact, epsilon = 1e-8);
            for x in 0..1 {
                assert_abs_diff_eq!(ess.g.t[x], ess_exact.g.t[x], epsilon = 1e-8);
            }
            for p in 0..2 {
                for j in 0..4 {
                    assert_abs_diff_eq!(
                        ess.ports[p].events[j],
                        ess_exact.ports[p].events[j],
                        epsilon = 1e-9
                    );
                }
                for x in 0..2 {
                    assert_abs_diff_eq!(
                        ess.ports[p].h[0].t[x],
                        ess_exact.ports[p].h[0].t[x],
                        epsilon = 1e-6
                    );
                    for y in 0..2 {
                        assert_abs_diff_eq!(
                            ess.ports[p].h[0].m[(x, y)],
                            ess_exact.ports[p].h[0].m[(x, y)],
                            epsilon = 1e-6
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn mstep_pools_and_ties_toggle_statistics() {
        let model = flat_model();
        let mut ess = NidsEss::zeros(&model);
        ess.g.t[0] = 100.0;
        // Port 80: 10 packet-in events against 3 + 2 seconds of active dwell.
        ess.ports[0].events[0] = 10.0;
        ess.ports[0].h[0].t[0] = 3.0;
        ess.ports[0].h[0].t[1] = 2.0;
        let updated = nids_mstep(&model, &ess).unwrap();
        let tog = &updated.submodels()[0].toggles()[0];
        assert_abs_diff_eq!(
            tog.rate(),
            (10.0 + PSEUDO_COUNT) / (5.0 + PSEUDO_COUNT),
            epsilon = 1e-12
        );
        // The tied rate is one number, so both active states agree exactly.
        let net = updated.to_ctbn();
        let idx = net.index_of("P:80:PKT_IN").unwrap();
        let mats = net.cim(idx).matrices();
        assert_eq!(mats[0].rate(0, 1), mats[1].rate(0, 1));
    }

    #[test]
    fn zero_events_fall_to_the_regularized_floor() {
        let model = flat_model();
        let mut ess = NidsEss::zeros(&model);
        ess.ports[1].h[0].t[0] = 40.0;
        ess.ports[1].h[0].t[1] = 60.0;
        let updated = nids_mstep(&model, &ess).unwrap();
        for tog in updated.submodels()[1].toggles() {
            assert!(tog.rate() > 0.0);
            assert_abs_diff_eq!(
                tog.rate(),
                PSEUDO_COUNT / (100.0 + PSEUDO_COUNT),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn impossible_trace_reports_degeneracy() {
        let g = mat(1, &[0.0]);
        let mut togs = toggles(2, [0.5, 0.5, 0.5, 0.5]);
        togs[0] = ToggleVariable::new(EventKind::PktIn, [0, 1], 0.0, 2).unwrap();
        let sub = PortSubmodel::new(
            PortKey::Port(80),
            vec![mat(2, &[0.0, 1.0, 1.0, 0.0])],
            togs,
        )
        .unwrap();
        let model = TrafficModel::new(g, vec![sub]).unwrap();
        let trace = TrafficTrace::new(
            vec![TrafficEvent { time: 5.0, port: 80, kind: EventKind::PktIn }],
            20.0,
        )
        .unwrap();
        let cfg = RbpfConfig { particles: 4, resample_every: 50.0, seed: 1 };
        assert!(matches!(
            rbpf_estep(&model, &trace, &cfg),
            Err(Error::Degeneracy)
        ));
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let model = flat_model();
        let trace = toy_trace();
        let cfg = NidsEmConfig { iterations: 0, particles: 5, resample_every: 50.0, seed: 9 };
        let out = rbpf_em(&model, &trace, &cfg).unwrap();
        assert!(out.loglik_estimates.is_empty());
        assert_eq!(out.model.to_text(), model.to_text());
    }

    #[test]
    fn fixed_seed_reproduces_likelihood_estimates_bit_for_bit() {
        // Four hidden states so the active pairs differ per event kind and
        // the sampled global paths actually move the likelihood.
        let ports = [PortKey::Port(80), PortKey::Port(22)];
        let model = crate::nids::model::build_traffic_model(&ports, 2, 4, 5).unwrap();
        let trace = toy_trace();
        let cfg = NidsEmConfig { iterations: 3, particles: 8, resample_every: 50.0, seed: 77 };
        let a = rbpf_em(&model, &trace, &cfg).unwrap();
        let b = rbpf_em(&model, &trace, &cfg).unwrap();
        assert_eq!(a.loglik_estimates, b.loglik_estimates);
        assert_eq!(a.model.to_text(), b.model.to_text());
        let other = NidsEmConfig { seed: 78, ..cfg };
        let c = rbpf_em(&model, &trace, &other).unwrap();
        assert_ne!(a.loglik_estimates, c.loglik_estimates);
    }

    #[test]
    fn systematic_resampling_respects_weights() {
        // Equal weights map every slot to itself.
        let idx = systematic_resample(&[1.0, 1.0, 1.0, 1.0], 0.5);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        // A dominant particle takes nearly everything; zero weights get none.
        let idx = systematic_resample(&[0.0, 100.0, 0.0, 1.0], 0.5);
        assert!(idx.iter().filter(|&&i| i == 1).count() >= 3);
        assert!(!idx.contains(&0));
        assert!(!idx.contains(&2));
    }
}
