//! Exact inference on the amalgamated hidden space.
//!
//! For small models the pair (G, H_1, ..., H_P) fits in one joint chain, so
//! the marked-point-process smoothing of [`super::estep`] can run on the
//! joint generator directly and the result folds back to per-variable
//! statistics. This is the reference the particle filter is compared
//! against; it shares the smoothing engine but none of the sampling,
//! weighting, or resampling machinery.

use nalgebra::{DMatrix, DVector};

use super::estep::{run_plan, NidsEss, Step};
use super::model::TrafficModel;
use super::trace::TrafficTrace;
use crate::ctbn::{joint_decode, joint_index, JOINT_CAP};
use crate::{Error, Result};

/// Exact expected statistics and log-likelihood of a trace under the model,
/// marginalizing the global chain and every hidden port chain jointly. Only
/// feasible while n_g * n_h^ports stays within the amalgamation cap.
pub fn exact_estep(model: &TrafficModel, trace: &TrafficTrace) -> Result<(f64, NidsEss)> {
    let n_g = model.n_g();
    let n_h = model.n_h();
    let n_ports = model.submodels().len();
    let mut sizes = vec![n_g];
    sizes.extend(std::iter::repeat(n_h).take(n_ports));
    let joint = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .filter(|&j| j <= JOINT_CAP)
        .ok_or(Error::StateSpaceCap {
            size: sizes
                .iter()
                .map(|&s| s as u128)
                .product::<u128>()
                .min(usize::MAX as u128) as usize,
            cap: JOINT_CAP,
        })?;

    // Joint generator: G moves by its own rates, each H by its conditional
    // rates under the current G; the diagonal then loses the total event
    // intensity of the joint state.
    let mut effective = DMatrix::<f64>::zeros(joint, joint);
    let mut digits = vec![0usize; 1 + n_ports];
    let mut other = vec![0usize; 1 + n_ports];
    for s in 0..joint {
        joint_decode(s, &sizes, &mut digits);
        let g = digits[0];
        let mut diag = 0.0;
        for gp in 0..n_g {
            if gp != g {
                other.copy_from_slice(&digits);
                other[0] = gp;
                let rate = model.g().rate(g, gp);
                effective[(s, joint_index(&other, &sizes))] = rate;
                diag += rate;
            }
        }
        for (p, sub) in model.submodels().iter().enumerate() {
            let h = digits[1 + p];
            for hp in 0..n_h {
                if hp != h {
                    other.copy_from_slice(&digits);
                    other[1 + p] = hp;
                    let rate = sub.h_cim(g).rate(h, hp);
                    effective[(s, joint_index(&other, &sizes))] = rate;
                    diag += rate;
                }
            }
            for tog in sub.toggles() {
                if tog.is_active(h) {
                    diag += tog.rate();
                }
            }
        }
        effective[(s, s)] = -diag;
    }

    // One event-rate selector per (port, toggle slot).
    let mut weights = Vec::with_capacity(n_ports * 4);
    for (p, sub) in model.submodels().iter().enumerate() {
        for tog in sub.toggles() {
            let w = DVector::from_fn(joint, |s, _| {
                joint_decode(s, &sizes, &mut digits);
                if tog.is_active(digits[1 + p]) {
                    tog.rate()
                } else {
                    0.0
                }
            });
            weights.push(w);
        }
    }

    let (routed, _dropped) = model.split_events(trace);
    let mut marks: Vec<(f64, usize)> = Vec::new();
    for (p, events) in routed.iter().enumerate() {
        for &(t, kind) in events {
            marks.push((t, 4 * p + kind.index()));
        }
    }
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut plan = Vec::with_capacity(2 * marks.len() + 1);
    let mut clock = 0.0;
    for &(t, mark) in &marks {
        if t > clock {
            plan.push(Step::Evolve { dt: t - clock, g: 0 });
            clock = t;
        }
        plan.push(Step::Hit { kind: mark });
    }
    if trace.horizon() > clock {
        plan.push(Step::Evolve {
            dt: trace.horizon() - clock,
            g: 0,
        });
    }

    let out = run_plan(std::slice::from_ref(&effective), &weights, &plan, None, true)?;
    if !out.loglik.is_finite() {
        return Err(Error::ImpossibleEvidence);
    }

    // Fold joint statistics back onto the variables.
    let mut ess = NidsEss::zeros(model);
    let joint_stats = &out.bins[0];
    let mut to = vec![0usize; 1 + n_ports];
    for s in 0..joint {
        joint_decode(s, &sizes, &mut digits);
        let g = digits[0];
        let t = joint_stats.t[s];
        ess.g.t[g] += t;
        for p in 0..n_ports {
            ess.ports[p].h[g].t[digits[1 + p]] += t;
        }
        for s2 in 0..joint {
            let m = joint_stats.m[(s, s2)];
            if m == 0.0 {
                continue;
            }
            joint_decode(s2, &sizes, &mut to);
            let changed: Vec<usize> =
                (0..=n_ports).filter(|&d| digits[d] != to[d]).collect();
            if changed.len() != 1 {
                return Err(Error::Numerical(format!(
                    "joint transition {s} -> {s2} changes {} variables",
                    changed.len()
                )));
            }
            if changed[0] == 0 {
                ess.g.m[(g, to[0])] += m;
            } else {
                let p = changed[0] - 1;
                ess.ports[p].h[g].m[(digits[1 + p], to[1 + p])] += m;
            }
        }
    }
    for (p, events) in routed.iter().enumerate() {
        for &(_, kind) in events {
            ess.ports[p].events[kind.index()] += 1.0;
        }
    }
    Ok((out.loglik, ess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctbn::{
        exact_estep as ctbn_estep, joint_evidence, Cim, CtbnModel, JointEvent, JointTrajectory,
    };
    use crate::ctmc::{IntensityMatrix, Trajectory};
    use crate::nids::estep::submodel_estep;
    use crate::nids::model::{toggle_active_pair, PortKey, PortSubmodel, ToggleVariable};
    use crate::nids::trace::{EventKind, TrafficEvent, TrafficTrace};
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

    fn two_port_model() -> TrafficModel {
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

    fn sample_trace() -> TrafficTrace {
        let events = vec![
            TrafficEvent { time: 0.8, port: 80, kind: EventKind::ConnOpen },
            TrafficEvent { time: 1.4, port: 22, kind: EventKind::PktIn },
            TrafficEvent { time: 2.0, port: 80, kind: EventKind::PktIn },
            TrafficEvent { time: 3.3, port: 22, kind: EventKind::PktOut },
            TrafficEvent { time: 4.1, port: 80, kind: EventKind::ConnClose },
        ];
        TrafficTrace::new(events, 6.0).unwrap()
    }

    #[test]
    fn degenerate_global_chain_factorizes_over_ports() {
        let model = two_port_model();
        let trace = sample_trace();
        let (ll, ess) = exact_estep(&model, &trace).unwrap();

        let g_path = Trajectory::new(0.0, vec![(0, 6.0)]).unwrap();
        let (routed, dropped) = model.split_events(&trace);
        assert_eq!(dropped, 0);
        let mut ll_sum = 0.0;
        for (p, sub) in model.submodels().iter().enumerate() {
            let out = submodel_estep(sub, 1, &g_path, &routed[p], None).unwrap();
            ll_sum += out.loglik;
            for x in 0..2 {
                assert_abs_diff_eq!(ess.ports[p].h[0].t[x], out.stats.h[0].t[x], epsilon = 1e-5);
                for y in 0..2 {
                    assert_abs_diff_eq!(
                        ess.ports[p].h[0].m[(x, y)],
                        out.stats.h[0].m[(x, y)],
                        epsilon = 1e-5
                    );
                }
            }
            assert_eq!(ess.ports[p].events, out.stats.events);
        }
        assert_abs_diff_eq!(ll, ll_sum, epsilon = 1e-8);
    }

    #[test]
    fn dwell_totals_cover_the_horizon_everywhere() {
        let model = two_port_model();
        let trace = sample_trace();
        let (_, ess) = exact_estep(&model, &trace).unwrap();
        assert_abs_diff_eq!(ess.g.t.sum(), 6.0, epsilon = 1e-9);
        for port in &ess.ports {
            assert_abs_diff_eq!(port.total_dwell(), 6.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn state_cap_is_enforced() {
        let ports: Vec<PortKey> = (1..=5).map(PortKey::Port).collect();
        let model = crate::nids::model::build_traffic_model(&ports, 4, 8, 3).unwrap();
        let trace = TrafficTrace::empty(5.0).unwrap();
        assert!(matches!(
            exact_estep(&model, &trace),
            Err(Error::StateSpaceCap { .. })
        ));
    }

    /// Cross-machinery oracle: a one-port model with a moving global chain,
    /// solved by structured-network smoothing with only the toggles observed.
    /// The joint amalgamation here must agree on the likelihood, the global
    /// statistics, and the binned hidden statistics.
    #[test]
    fn amalgamated_smoothing_agrees_with_structured_inference() {
        let n_g = 2;
        let n_h = 2;
        let g_cim = mat(2, &[0.0, 0.3, 0.5, 0.0]);
        let h_cims = vec![mat(2, &[0.0, 0.8, 1.2, 0.0]), mat(2, &[0.0, 2.2, 0.4, 0.0])];
        let rates = [0.7, 0.4, 0.25, 0.55];
        let sub =
            PortSubmodel::new(PortKey::Port(80), h_cims.clone(), toggles(n_h, rates)).unwrap();
        let model = TrafficModel::new(g_cim.clone(), vec![sub]).unwrap();

        let mut names = vec!["G".into(), "H".into()];
        let mut sizes = vec![n_g, n_h];
        let mut cims = vec![Cim::root(0, g_cim), Cim::new(1, vec![0], h_cims)];
        for (j, &kind) in EventKind::ALL.iter().enumerate() {
            names.push(kind.name().to_string());
            sizes.push(2);
            let mats = (0..n_h).map(|_| mat(2, &[0.0, rates[j], rates[j], 0.0])).collect();
            cims.push(Cim::new(2 + j, vec![1], mats));
        }
        let net = CtbnModel::new(names, sizes, cims, None).unwrap();

        // A hand-laid toggle path: every flip is an observed event and each
        // close has an earlier open, so the recorder accepts the trace. The
        // global and hidden coordinates stay put; they are hidden anyway.
        let horizon = 14.0;
        let flips = [
            (1.3, 2),
            (2.6, 4),
            (3.9, 2),
            (5.2, 5),
            (6.8, 3),
            (8.1, 4),
            (9.7, 2),
            (11.4, 5),
            (12.9, 3),
        ];
        let mut values = [0usize; 6];
        let joint_events = flips
            .iter()
            .map(|&(time, variable)| {
                values[variable] = 1 - values[variable];
                JointEvent { time, variable, value: values[variable] }
            })
            .collect();
        let traj = JointTrajectory::new(vec![0; 6], joint_events, horizon).unwrap();
        let events: Vec<TrafficEvent> = flips
            .iter()
            .map(|&(time, variable)| TrafficEvent {
                time,
                port: 80,
                kind: EventKind::ALL[variable - 2],
            })
            .collect();
        let trace = TrafficTrace::new(events, horizon).unwrap();

        let (ll, ess) = exact_estep(&model, &trace).unwrap();

        let observed = vec![2, 3, 4, 5];
        let ev = joint_evidence(&net, &traj, &observed).unwrap();
        let (ll_net, net_stats) = ctbn_estep(&net, &[ev]).unwrap();
        assert_abs_diff_eq!(ll, ll_net, epsilon = 1e-6);

        for g in 0..n_g {
            assert_abs_diff_eq!(ess.g.t[g], net_stats.stats(0, 0).t[g], epsilon = 1e-5);
            let h_net = net_stats.stats(1, g);
            for x in 0..n_h {
                assert_abs_diff_eq!(ess.ports[0].h[g].t[x], h_net.t[x], epsilon = 1e-5);
                for y in 0..n_h {
                    assert_abs_diff_eq!(
                        ess.ports[0].h[g].m[(x, y)],
                        h_net.m[(x, y)],
                        epsilon = 1e-5
                    );
                    assert_abs_diff_eq!(
                        ess.g.m[(x, y)],
                        net_stats.stats(0, 0).m[(x, y)],
                        epsilon = 1e-5
                    );
                }
            }
        }
    }
}
