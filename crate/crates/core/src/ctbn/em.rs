//! Exact EM by flattening: run the joint chain's forward-backward over the
//! evidence, fold the joint expected statistics back to per-variable
//! conditional statistics, and re-estimate every conditional matrix.

use super::amalgamate::amalgamate;
use super::learn::{ctbn_mle, ConditionalSuffStats};
use super::model::{joint_decode, CtbnModel};
use crate::ctmc::{
    expected_suff_stats, message_pass_with_initial, EmConfig, EvidenceTrajectory,
    SufficientStatistics,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CtbnEmOutcome {
    pub model: CtbnModel,
    /// Log evidence at the start of each iteration.
    pub loglik: Vec<f64>,
    pub converged: bool,
}

/// One exact E step over joint-state evidence: total log evidence plus the
/// conditional expected statistics.
pub fn exact_estep(
    model: &CtbnModel,
    evidence: &[EvidenceTrajectory],
) -> Result<(f64, ConditionalSuffStats)> {
    let q = amalgamate(model)?;
    let pi0 = model.initial().map(|_| model.initial_joint());
    let mut cond = ConditionalSuffStats::zeros(model);
    let mut ll = 0.0;
    for (idx, ev) in evidence.iter().enumerate() {
        let mp = message_pass_with_initial(&q, ev, pi0.as_ref())?;
        if mp.collapsed() {
            return Err(Error::InvalidEvidence(format!(
                "trajectory {idx} has probability zero under the current model"
            )));
        }
        ll += mp.loglik();
        let ss = expected_suff_stats(&mp)?;
        fold_joint_stats(model, &ss, &mut cond)?;
    }
    Ok((ll, cond))
}

/// Attribute joint-state dwell and transition expectations to the variable
/// and parent instantiation they belong to.
pub(crate) fn fold_joint_stats(
    model: &CtbnModel,
    ss: &SufficientStatistics,
    cond: &mut ConditionalSuffStats,
) -> Result<()> {
    let sizes = model.sizes();
    let n_vars = model.n_variables();
    let size = ss.n();
    let mut vx = vec![0usize; n_vars];
    let mut vy = vec![0usize; n_vars];
    for x in 0..size {
        joint_decode(x, sizes, &mut vx);
        for i in 0..n_vars {
            let u = model.parent_index_of(i, &vx);
            cond.stats_mut(i, u).t[vx[i]] += ss.t[x];
        }
        for y in 0..size {
            let count = ss.m[(x, y)];
            if count == 0.0 || x == y {
                continue;
            }
            joint_decode(y, sizes, &mut vy);
            let mut changed = None;
            for i in 0..n_vars {
                if vx[i] != vy[i] {
                    if changed.is_some() {
                        return Err(Error::Numerical(
                            "expected transition mass on a multi-variable change".into(),
                        ));
                    }
                    changed = Some(i);
                }
            }
            let i = changed.expect("distinct joint states must differ somewhere");
            let u = model.parent_index_of(i, &vx);
            cond.stats_mut(i, u).m[(vx[i], vy[i])] += count;
        }
    }
    Ok(())
}

/// Fit the conditional matrices to joint-state evidence by exact EM on the
/// flattened chain. The graph, state spaces, and initial distribution are
/// kept fixed.
pub fn exact_em(
    init: &CtbnModel,
    evidence: &[EvidenceTrajectory],
    cfg: &EmConfig,
) -> Result<CtbnEmOutcome> {
    if evidence.is_empty() {
        return Err(Error::InvalidArgument("no evidence trajectories".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let mut model = init.clone();
    let mut loglik: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let (ll, cond) = exact_estep(&model, evidence)?;
        if let Some(&prev) = loglik.last() {
            if ll - prev <= cfg.rel_tol * prev.abs() {
                loglik.push(ll);
                converged = true;
                break;
            }
        }
        loglik.push(ll);
        model = ctbn_mle(&model, &cond)?;
    }

    Ok(CtbnEmOutcome {
        model,
        loglik,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctbn::learn::{ctbn_suff_stats, ConditionalSuffStats};
    use crate::ctbn::model::Cim;
    use crate::ctbn::sample::forward_sample;
    use crate::ctbn::trajectory::joint_evidence;
    use crate::ctmc::{EvidenceTrajectory, IntensityMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn rates2(q01: f64, q10: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, q01, q10, 0.0])).unwrap()
    }

    fn chain(a01: f64, a10: f64, b: [[f64; 2]; 2]) -> CtbnModel {
        CtbnModel::new(
            vec!["A".into(), "B".into()],
            vec![2, 2],
            vec![
                Cim::root(0, rates2(a01, a10)),
                Cim::new(
                    1,
                    vec![0],
                    vec![rates2(b[0][0], b[0][1]), rates2(b[1][0], b[1][1])],
                ),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fully_observed_evidence_converges_in_one_m_step() {
        let truth = chain(0.8, 1.1, [[0.6, 0.9], [2.5, 3.5]]);
        let trajs: Vec<_> = (0..5)
            .map(|s| forward_sample(&truth, 40.0, 900 + s).unwrap())
            .collect();
        let evidence: Vec<EvidenceTrajectory> = trajs
            .iter()
            .map(|t| {
                EvidenceTrajectory::from_trajectory(&t.flatten(truth.sizes()).unwrap(), 4).unwrap()
            })
            .collect();
        let mut total = ConditionalSuffStats::zeros(&truth);
        for t in &trajs {
            total.add(&ctbn_suff_stats(&truth, t).unwrap());
        }
        let direct = ctbn_mle(&truth, &total).unwrap();

        let init = chain(1.0, 1.0, [[1.0, 1.0], [1.0, 1.0]]);
        let out = exact_em(&init, &evidence, &EmConfig::default()).unwrap();
        assert!(out.converged);
        for v in 0..2 {
            for u in 0..truth.cim(v).matrices().len() {
                for x in 0..2 {
                    for y in 0..2 {
                        assert_abs_diff_eq!(
                            out.model.cim(v).matrix(u).rate(x, y),
                            direct.cim(v).matrix(u).rate(x, y),
                            epsilon = 1e-9
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hidden_parent_is_recovered_near_the_generator() {
        // The child switches 7x faster under A=1, so the posterior over the
        // hidden parent is sharp enough to pin its rates.
        let truth = chain(1.0, 1.4, [[0.8, 1.2], [6.0, 8.0]]);
        let evidence: Vec<EvidenceTrajectory> = (0..60)
            .map(|s| {
                let t = forward_sample(&truth, 25.0, 4000 + s).unwrap();
                joint_evidence(&truth, &t, &[1]).unwrap()
            })
            .collect();
        // Start near the generator so the hidden labels keep their identity.
        let init = chain(1.3, 1.1, [[0.6, 1.5], [7.0, 6.5]]);
        let out = exact_em(
            &init,
            &evidence,
            &EmConfig {
                max_iters: 50,
                rel_tol: 1e-8,
            },
        )
        .unwrap();
        for w in out.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "decrease: {} -> {}", w[0], w[1]);
        }
        let got = &out.model;
        let pairs = [
            (got.cim(0).matrix(0).rate(0, 1), 1.0),
            (got.cim(0).matrix(0).rate(1, 0), 1.4),
            (got.cim(1).matrix(0).rate(0, 1), 0.8),
            (got.cim(1).matrix(0).rate(1, 0), 1.2),
            (got.cim(1).matrix(1).rate(0, 1), 6.0),
            (got.cim(1).matrix(1).rate(1, 0), 8.0),
        ];
        for (est, truth) in pairs {
            assert!(
                (est - truth).abs() / truth < 0.10,
                "estimate {est} vs generator {truth}"
            );
        }
    }

    #[test]
    fn estep_statistics_match_complete_data_on_full_observation() {
        let truth = chain(0.8, 1.1, [[0.6, 0.9], [2.5, 3.5]]);
        let traj = forward_sample(&truth, 30.0, 77).unwrap();
        let ev = EvidenceTrajectory::from_trajectory(&traj.flatten(truth.sizes()).unwrap(), 4)
            .unwrap();
        let (_, cond) = exact_estep(&truth, &[ev]).unwrap();
        let complete = ctbn_suff_stats(&truth, &traj).unwrap();
        for v in 0..2 {
            for u in 0..cond.n_instantiations(v) {
                let a = cond.stats(v, u);
                let b = complete.stats(v, u);
                for x in 0..2 {
                    assert_abs_diff_eq!(a.t[x], b.t[x], epsilon = 1e-6);
                    for y in 0..2 {
                        assert_abs_diff_eq!(a.m[(x, y)], b.m[(x, y)], epsilon = 1e-6);
                    }
                }
            }
        }
    }
}
