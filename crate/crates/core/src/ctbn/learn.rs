//! Complete-data statistics per (variable, parent instantiation), the
//! decomposed likelihood, and the closed-form estimator built on the flat
//! chain's regularized estimator.

use super::model::{Cim, CtbnModel};
use super::trajectory::JointTrajectory;
use crate::ctmc::{loglik_complete, mle_complete, SufficientStatistics};
use crate::{Error, Result};

/// Dwell and transition statistics for every variable under every parent
/// instantiation. Real-valued so the same container carries expected
/// statistics.
#[derive(Debug, Clone)]
pub struct ConditionalSuffStats {
    stats: Vec<Vec<SufficientStatistics>>,
}

impl ConditionalSuffStats {
    pub fn zeros(model: &CtbnModel) -> Self {
        let stats = (0..model.n_variables())
            .map(|i| {
                let n_u: usize = model.parent_sizes(i).iter().product();
                (0..n_u.max(1))
                    .map(|_| SufficientStatistics::zeros(model.size(i)))
                    .collect()
            })
            .collect();
        ConditionalSuffStats { stats }
    }

    pub fn n_variables(&self) -> usize {
        self.stats.len()
    }

    pub fn n_instantiations(&self, variable: usize) -> usize {
        self.stats[variable].len()
    }

    pub fn stats(&self, variable: usize, u: usize) -> &SufficientStatistics {
        &self.stats[variable][u]
    }

    pub(crate) fn stats_mut(&mut self, variable: usize, u: usize) -> &mut SufficientStatistics {
        &mut self.stats[variable][u]
    }

    pub fn add(&mut self, other: &ConditionalSuffStats) {
        for (mine, theirs) in self.stats.iter_mut().zip(&other.stats) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.add(b);
            }
        }
    }

    /// Total dwell of one variable summed over its states and parent
    /// instantiations; equals the horizon for statistics of one path.
    pub fn total_dwell(&self, variable: usize) -> f64 {
        self.stats[variable].iter().map(|s| s.t.sum()).sum()
    }
}

/// Accumulate the statistics of a complete path under the model's structure.
pub fn ctbn_suff_stats(model: &CtbnModel, traj: &JointTrajectory) -> Result<ConditionalSuffStats> {
    let mut out = ConditionalSuffStats::zeros(model);
    add_joint_trajectory_stats(model, traj, &mut out)?;
    Ok(out)
}

pub(crate) fn add_joint_trajectory_stats(
    model: &CtbnModel,
    traj: &JointTrajectory,
    out: &mut ConditionalSuffStats,
) -> Result<()> {
    let n_vars = model.n_variables();
    if traj.n_variables() != n_vars {
        return Err(Error::InvalidTrajectory(format!(
            "trajectory over {} variables for a {}-variable model",
            traj.n_variables(),
            n_vars
        )));
    }
    let bad = traj
        .initial()
        .iter()
        .zip(model.sizes())
        .any(|(&v, &s)| v >= s)
        || traj
            .events()
            .iter()
            .any(|e| e.value >= model.size(e.variable));
    if bad {
        return Err(Error::InvalidTrajectory(
            "trajectory leaves the model's state space".into(),
        ));
    }
    let mut values = traj.initial().to_vec();
    let mut since = 0.0;
    let dwell = |values: &[usize], out: &mut ConditionalSuffStats, from: f64, to: f64| {
        for i in 0..n_vars {
            let u = model.parent_index_of(i, values);
            out.stats_mut(i, u).t[values[i]] += to - from;
        }
    };
    for e in traj.events() {
        dwell(&values, out, since, e.time);
        let u = model.parent_index_of(e.variable, &values);
        out.stats_mut(e.variable, u).m[(values[e.variable], e.value)] += 1.0;
        values[e.variable] = e.value;
        since = e.time;
    }
    dwell(&values, out, since, traj.horizon());
    Ok(())
}

/// Per-instantiation maximum-likelihood conditional matrices, regularized so
/// never-visited instantiations fall back to a proper default.
pub fn ctbn_mle(model: &CtbnModel, ss: &ConditionalSuffStats) -> Result<CtbnModel> {
    if ss.n_variables() != model.n_variables() {
        return Err(Error::InvalidArgument(format!(
            "statistics over {} variables for a {}-variable model",
            ss.n_variables(),
            model.n_variables()
        )));
    }
    let cims = (0..model.n_variables())
        .map(|i| {
            let matrices = ss.stats[i]
                .iter()
                .map(mle_complete)
                .collect::<Result<Vec<_>>>()?;
            Ok(Cim::new(i, model.parents(i).to_vec(), matrices))
        })
        .collect::<Result<Vec<_>>>()?;
    model.with_cims(cims)
}

/// Complete-data log-likelihood, decomposed per variable and parent
/// instantiation. Negative infinity when a counted transition has rate zero.
pub fn ctbn_loglik(model: &CtbnModel, ss: &ConditionalSuffStats) -> f64 {
    let mut ll = 0.0;
    for i in 0..model.n_variables() {
        for (u, stats) in ss.stats[i].iter().enumerate() {
            ll += loglik_complete(model.cim(i).matrix(u), stats);
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctbn::amalgamate::amalgamate;
    use crate::ctbn::model::Cim;
    use crate::ctbn::sample::forward_sample;
    use crate::ctbn::trajectory::JointEvent;
    use crate::ctmc::{suff_stats_complete, IntensityMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn rates2(q01: f64, q10: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, q01, q10, 0.0])).unwrap()
    }

    fn chain_model() -> CtbnModel {
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

    fn ev(time: f64, variable: usize, value: usize) -> JointEvent {
        JointEvent {
            time,
            variable,
            value,
        }
    }

    #[test]
    fn hand_trace_statistics_match_manual_bookkeeping() {
        let model = chain_model();
        let traj =
            JointTrajectory::new(vec![0, 0], vec![ev(1.0, 0, 1), ev(1.5, 1, 1)], 2.0).unwrap();
        let ss = ctbn_suff_stats(&model, &traj).unwrap();
        // A is parentless: 1s in 0, 1s in 1, one 0 -> 1 transition.
        assert_abs_diff_eq!(ss.stats(0, 0).t[0], 1.0);
        assert_abs_diff_eq!(ss.stats(0, 0).t[1], 1.0);
        assert_abs_diff_eq!(ss.stats(0, 0).m[(0, 1)], 1.0);
        // B under A=0: 1s dwell in 0. Under A=1: 0.5s in 0 with one jump,
        // then 0.5s in 1.
        assert_abs_diff_eq!(ss.stats(1, 0).t[0], 1.0);
        assert_abs_diff_eq!(ss.stats(1, 0).m.sum(), 0.0);
        assert_abs_diff_eq!(ss.stats(1, 1).t[0], 0.5);
        assert_abs_diff_eq!(ss.stats(1, 1).t[1], 0.5);
        assert_abs_diff_eq!(ss.stats(1, 1).m[(0, 1)], 1.0);
        for v in 0..2 {
            assert_abs_diff_eq!(ss.total_dwell(v), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn parentless_statistics_equal_the_marginal_chain_statistics() {
        let model = chain_model();
        let traj = forward_sample(&model, 200.0, 5).unwrap();
        let ss = ctbn_suff_stats(&model, &traj).unwrap();
        let marginal = traj.marginal(0).unwrap();
        let flat = suff_stats_complete(&marginal, 2).unwrap();
        assert_abs_diff_eq!(ss.stats(0, 0).t[0], flat.t[0], epsilon = 1e-9);
        assert_abs_diff_eq!(ss.stats(0, 0).m[(0, 1)], flat.m[(0, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(ss.stats(0, 0).m[(1, 0)], flat.m[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn estimator_is_the_count_over_time_quotient() {
        let model = chain_model();
        let mut ss = ConditionalSuffStats::zeros(&model);
        ss.stats_mut(0, 0).t[0] = 2.0;
        ss.stats_mut(0, 0).m[(0, 1)] = 4.0;
        let fit = ctbn_mle(&model, &ss).unwrap();
        // Regularization shifts the quotient by under a part in a thousand.
        assert_abs_diff_eq!(fit.cim(0).matrix(0).rate(0, 1), 2.0, epsilon = 2e-3);
    }

    #[test]
    fn unvisited_instantiation_falls_back_to_the_regularized_default() {
        let model = chain_model();
        let mut ss = ConditionalSuffStats::zeros(&model);
        ss.stats_mut(1, 1).t[0] = 3.0;
        ss.stats_mut(1, 1).m[(0, 1)] = 6.0;
        let fit = ctbn_mle(&model, &ss).unwrap();
        let default = mle_complete(&SufficientStatistics::zeros(2)).unwrap();
        assert_eq!(
            fit.cim(1).matrix(0).matrix(),
            default.matrix(),
            "untouched instantiation must equal the zero-statistics estimate"
        );
    }

    #[test]
    fn decomposed_likelihood_matches_the_flattened_chain() {
        let model = chain_model();
        let joint = amalgamate(&model).unwrap();
        for seed in 0..20 {
            let traj = forward_sample(&model, 30.0, 1000 + seed).unwrap();
            let ss = ctbn_suff_stats(&model, &traj).unwrap();
            let flat = traj.flatten(model.sizes()).unwrap();
            let flat_ss = suff_stats_complete(&flat, 4).unwrap();
            assert_abs_diff_eq!(
                ctbn_loglik(&model, &ss),
                crate::ctmc::loglik_complete(&joint, &flat_ss),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn zero_statistics_give_zero_likelihood() {
        let model = chain_model();
        let ss = ConditionalSuffStats::zeros(&model);
        assert_eq!(ctbn_loglik(&model, &ss), 0.0);
    }

    #[test]
    fn recovery_from_sampled_data_within_five_percent() {
        // Random rates in [0.5, 5] over a 2-variable chain.
        let mut rng = crate::rng::substream(77, "ctbn-recovery");
        let model = CtbnModel::new(
            vec!["A".into(), "B".into()],
            vec![2, 2],
            vec![
                Cim::root(0, IntensityMatrix::random_log_uniform(2, 0.5, 5.0, &mut rng).unwrap()),
                Cim::new(
                    1,
                    vec![0],
                    vec![
                        IntensityMatrix::random_log_uniform(2, 0.5, 5.0, &mut rng).unwrap(),
                        IntensityMatrix::random_log_uniform(2, 0.5, 5.0, &mut rng).unwrap(),
                    ],
                ),
            ],
            None,
        )
        .unwrap();
        let traj = forward_sample(&model, 1e5, 13).unwrap();
        let fit = ctbn_mle(&model, &ctbn_suff_stats(&model, &traj).unwrap()).unwrap();
        for v in 0..2 {
            for u in 0..model.cim(v).matrices().len() {
                for x in 0..2 {
                    for y in 0..2 {
                        if x == y {
                            continue;
                        }
                        let truth = model.cim(v).matrix(u).rate(x, y);
                        let est = fit.cim(v).matrix(u).rate(x, y);
                        assert!((est - truth).abs() / truth < 0.05, "{est} vs {truth}");
                    }
                }
            }
        }
    }
}
