//! Forward sampling by competing exponential clocks: each variable holds a
//! candidate fire time, the earliest fires, and only the fired variable and
//! its children are re-drawn.

use rand::Rng;

use super::model::CtbnModel;
use super::trajectory::{JointEvent, JointTrajectory};
use crate::ctmc::{sample_successor, Trajectory};
use crate::rng::{sample_exp, substream};
use crate::{Error, Result};

/// Sample a complete path of duration `horizon`; all randomness flows from
/// `seed`.
pub fn forward_sample(model: &CtbnModel, horizon: f64, seed: u64) -> Result<JointTrajectory> {
    forward_sample_rng(model, horizon, &mut substream(seed, "ctbn.forward"))
}

/// Sampler over an external stream, for callers composing named sub-streams.
pub fn forward_sample_rng<R: Rng>(
    model: &CtbnModel,
    horizon: f64,
    rng: &mut R,
) -> Result<JointTrajectory> {
    forward_sample_clamped(model, horizon, &[], rng)
}

/// Forward sampling with some variables clamped to given paths. Clamped
/// variables never race; their recorded changes fire at the given times and
/// re-draw their children's clocks like any other transition.
pub fn forward_sample_clamped<R: Rng>(
    model: &CtbnModel,
    horizon: f64,
    clamped: &[(usize, &Trajectory)],
    rng: &mut R,
) -> Result<JointTrajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let n_vars = model.n_variables();
    let mut clamp_of = vec![None; n_vars];
    for (k, &(v, traj)) in clamped.iter().enumerate() {
        if v >= n_vars || clamp_of[v].is_some() {
            return Err(Error::InvalidArgument(format!(
                "clamp {k} names variable {v} twice or out of range"
            )));
        }
        if traj.start() != 0.0 || (traj.duration() - horizon).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "clamped path for variable {v} does not span [0, {horizon}]"
            )));
        }
        if traj.max_state() >= model.size(v) {
            return Err(Error::InvalidArgument(format!(
                "clamped path for variable {v} leaves its state space"
            )));
        }
        clamp_of[v] = Some(traj);
    }

    let mut values = model.sample_initial(rng)?;
    for (v, traj) in clamped {
        values[*v] = traj.segments()[0].0;
    }
    let initial = values.clone();

    // Remaining clamp changes, earliest last so firing pops from the back.
    let mut clamp_changes: Vec<(f64, usize, usize)> = Vec::new();
    for &(v, traj) in clamped {
        let mut t = 0.0;
        let segs = traj.segments();
        for i in 0..segs.len().saturating_sub(1) {
            t += segs[i].1;
            clamp_changes.push((t, v, segs[i + 1].0));
        }
    }
    clamp_changes.sort_by(|a, b| b.0.total_cmp(&a.0));

    let children: Vec<Vec<usize>> = (0..n_vars).map(|i| model.children(i)).collect();
    let is_free = |v: usize| clamp_of[v].is_none();
    let mut next = vec![f64::INFINITY; n_vars];
    let draw = |values: &[usize], v: usize, now: f64, rng: &mut R| {
        let q = model.rate_matrix_for(v, values);
        now + sample_exp(rng, q.exit_rate(values[v]))
    };
    for v in 0..n_vars {
        if is_free(v) {
            next[v] = draw(&values, v, 0.0, rng);
        }
    }

    let mut events = Vec::new();
    loop {
        let free_min = (0..n_vars)
            .filter(|&v| is_free(v))
            .min_by(|&a, &b| next[a].total_cmp(&next[b]));
        let t_free = free_min.map_or(f64::INFINITY, |v| next[v]);
        let t_clamp = clamp_changes.last().map_or(f64::INFINITY, |c| c.0);
        if t_free.min(t_clamp) >= horizon {
            break;
        }
        let (t, fired, value) = if t_clamp <= t_free {
            let (t, v, s) = clamp_changes.pop().unwrap();
            (t, v, s)
        } else {
            let v = free_min.unwrap();
            let q = model.rate_matrix_for(v, &values);
            (next[v], v, sample_successor(q, values[v], rng))
        };
        values[fired] = value;
        events.push(JointEvent {
            time: t,
            variable: fired,
            value,
        });
        if is_free(fired) {
            next[fired] = draw(&values, fired, t, rng);
        }
        for &c in &children[fired] {
            if is_free(c) {
                next[c] = draw(&values, c, t, rng);
            }
        }
    }
    JointTrajectory::new(initial, events, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctbn::learn::{ctbn_mle, ctbn_suff_stats};
    use crate::ctbn::model::Cim;
    use crate::ctmc::{sample_trajectory, IntensityMatrix};
    use nalgebra::DMatrix;

    fn rates2(q01: f64, q10: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, q01, q10, 0.0])).unwrap()
    }

    fn chain_model() -> CtbnModel {
        // A drives B: under A=0, B flips slowly; under A=1, fast.
        CtbnModel::new(
            vec!["A".into(), "B".into()],
            vec![2, 2],
            vec![
                Cim::root(0, rates2(0.8, 1.1)),
                Cim::new(1, vec![0], vec![rates2(0.6, 0.9), rates2(2.5, 3.5)]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn conditional_rates_are_recovered_from_a_long_sample() {
        let model = chain_model();
        let traj = forward_sample(&model, 1e5, 41).unwrap();
        let ss = ctbn_suff_stats(&model, &traj).unwrap();
        let fit = ctbn_mle(&model, &ss).unwrap();
        for v in 0..2 {
            for u in 0..model.cim(v).matrices().len() {
                let truth = model.cim(v).matrix(u);
                let est = fit.cim(v).matrix(u);
                for x in 0..2 {
                    for y in 0..2 {
                        if x == y {
                            continue;
                        }
                        let rel = (est.rate(x, y) - truth.rate(x, y)).abs() / truth.rate(x, y);
                        assert!(
                            rel < 0.05,
                            "variable {v} u {u} rate {x}->{y}: {} vs {}",
                            est.rate(x, y),
                            truth.rate(x, y)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn single_variable_sampling_matches_the_flat_chain_sampler() {
        let q = rates2(1.4, 0.7);
        let model = CtbnModel::new(
            vec!["X".into()],
            vec![2],
            vec![Cim::root(0, q.clone())],
            None,
        )
        .unwrap();
        // Compare mean dwell in state 0 against the flat sampler and the
        // exponential mean they both target.
        let mut dwell_ctbn = Vec::new();
        let traj = forward_sample(&model, 2e4, 7).unwrap();
        let flat = traj.flatten(&[2]).unwrap();
        for &(s, d) in &flat.segments()[..flat.segments().len() - 1] {
            if s == 0 {
                dwell_ctbn.push(d);
            }
        }
        let mut rng = crate::rng::substream(7, "flat-compare");
        let reference = sample_trajectory(&q, &[1.0, 1.0], 0.0, 2e4, &mut rng).unwrap();
        let mut dwell_flat = Vec::new();
        for &(s, d) in &reference.segments()[..reference.segments().len() - 1] {
            if s == 0 {
                dwell_flat.push(d);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let truth = 1.0 / 1.4;
        for d in [&dwell_ctbn, &dwell_flat] {
            let se = truth / (d.len() as f64).sqrt();
            assert!((mean(d) - truth).abs() < 3.0 * se, "{} vs {truth}", mean(d));
        }
    }

    #[test]
    fn no_two_events_share_a_timestamp() {
        let model = chain_model();
        let traj = forward_sample(&model, 500.0, 3).unwrap();
        assert!(traj.events().len() > 100);
        for w in traj.events().windows(2) {
            assert!(w[0].time < w[1].time);
        }
    }

    #[test]
    fn same_seed_reproduces_the_trajectory() {
        let model = chain_model();
        let a = forward_sample(&model, 50.0, 99).unwrap();
        let b = forward_sample(&model, 50.0, 99).unwrap();
        assert_eq!(a.initial(), b.initial());
        assert_eq!(a.events(), b.events());
    }

    #[test]
    fn clamped_variable_follows_its_script() {
        let model = chain_model();
        let script = Trajectory::new(0.0, vec![(0, 4.0), (1, 6.0)]).unwrap();
        let mut rng = crate::rng::substream(11, "clamp");
        let traj = forward_sample_clamped(&model, 10.0, &[(0, &script)], &mut rng).unwrap();
        let m = traj.marginal(0).unwrap();
        assert_eq!(m.segments(), script.segments());
    }

    #[test]
    fn non_blanket_variable_does_not_disturb_a_child_given_its_parent_path() {
        // Chain A -> B -> C with B clamped: C's law given B's path must not
        // depend on whether A is simulated at all.
        let b_to_c = vec![rates2(0.5, 0.8), rates2(3.0, 2.0)];
        let three = CtbnModel::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![2, 2, 2],
            vec![
                Cim::root(0, rates2(2.0, 2.0)),
                Cim::new(1, vec![0], vec![rates2(0.7, 0.7), rates2(1.8, 1.8)]),
                Cim::new(2, vec![1], b_to_c.clone()),
            ],
            None,
        )
        .unwrap();
        let two = CtbnModel::new(
            vec!["B".into(), "C".into()],
            vec![2, 2],
            vec![Cim::root(0, rates2(1.0, 1.0)), Cim::new(1, vec![0], b_to_c)],
            None,
        )
        .unwrap();
        let script = Trajectory::new(0.0, vec![(0, 3.0), (1, 4.0), (0, 3.0)]).unwrap();

        let runs = 4000;
        let mut mean_dwell = [0.0f64; 2];
        let mut rng3 = crate::rng::substream(21, "blanket-three");
        let mut rng2 = crate::rng::substream(22, "blanket-two");
        for r in 0..runs {
            let t3 = forward_sample_clamped(&three, 10.0, &[(1, &script)], &mut rng3).unwrap();
            let c3 = t3.marginal(2).unwrap();
            let t2 = forward_sample_clamped(&two, 10.0, &[(0, &script)], &mut rng2).unwrap();
            let c2 = t2.marginal(1).unwrap();
            let dwell0 = |t: &Trajectory| {
                t.segments()
                    .iter()
                    .filter(|&&(s, _)| s == 0)
                    .map(|&(_, d)| d)
                    .sum::<f64>()
            };
            mean_dwell[0] += dwell0(&c3);
            mean_dwell[1] += dwell0(&c2);
            let _ = r;
        }
        for m in &mut mean_dwell {
            *m /= runs as f64;
        }
        // Dwell in C=0 over a 10s window; spread is a few seconds, so 3
        // standard errors of the difference is well under 0.3s.
        let se = 3.0 / (runs as f64).sqrt();
        assert!(
            (mean_dwell[0] - mean_dwell[1]).abs() < 3.0 * se * 2.0_f64.sqrt(),
            "{} vs {}",
            mean_dwell[0],
            mean_dwell[1]
        );
    }
}
