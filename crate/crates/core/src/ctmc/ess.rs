//! Expected sufficient statistics of a partially observed trajectory.
//!
//! Between breakpoints the posterior mass assigned to state pairs is an
//! integral of the product of forward and backward messages propagated into
//! the interval. The integrand is evaluated on a doubling grid by stepping
//! both messages with the interval's matrix exponential and accumulating
//! per-node normalized outer products with composite Simpson weights, so the
//! scale of the messages cancels node by node. Observed transitions at
//! forced-jump breakpoints contribute exactly one expected count spread over
//! the state pairs consistent with the evidence.

use nalgebra::{DMatrix, DVector};

use super::evidence::BoundaryOp;
use super::expm::expm;
use super::message::{restricted_generator, MessagePass};
use super::SufficientStatistics;
use crate::{Error, Result};

/// Floor on the number of Simpson subintervals per evidence interval.
const MIN_STEPS: usize = 32;
/// Refinement stops when the statistics move by less than this relative
/// amount, or at this many subintervals.
const REL_TOL: f64 = 1e-6;
const MAX_STEPS: usize = 2048;

/// Expected dwell times and transition counts given the evidence in `mp`.
pub fn expected_suff_stats(mp: &MessagePass) -> Result<SufficientStatistics> {
    if mp.collapsed() {
        return Err(Error::ImpossibleEvidence);
    }
    let n = mp.n();
    let q = mp.q().clone();
    let compiled = mp.compiled();
    let k = compiled.times.len() - 1;
    let mut stats = SufficientStatistics::zeros(n);

    // Expected count of the observed transition at each forced boundary.
    for i in 1..k {
        if let BoundaryOp::Jump { from, to } = &compiled.ops[i] {
            let a = mp.alpha_pre(i);
            let b = mp.beta_post(i);
            let mut total = 0.0;
            for &x in from {
                for &y in to {
                    if x != y {
                        total += a[x] * q.rate(x, y) * b[y];
                    }
                }
            }
            if total <= 0.0 {
                return Err(Error::Numerical(format!(
                    "forced transition at t = {} has zero posterior mass",
                    compiled.times[i]
                )));
            }
            for &x in from {
                for &y in to {
                    if x != y {
                        stats.m[(x, y)] += a[x] * q.rate(x, y) * b[y] / total;
                    }
                }
            }
        }
    }

    // Interval integrals on a per-interval adaptive grid.
    for i in 0..k {
        let dt = compiled.times[i + 1] - compiled.times[i];
        let allowed = &compiled.interval_states[i];
        let g = restricted_generator(&q, allowed);
        let a0 = mp.alpha_post(i);
        let b1 = mp.beta_pre(i + 1);
        let integral = integrate_outer(&g, a0, b1, dt)?;
        for &x in allowed {
            stats.t[x] += integral[(x, x)];
            for &y in allowed {
                if y != x {
                    stats.m[(x, y)] += q.rate(x, y) * integral[(x, y)];
                }
            }
        }
    }

    Ok(stats)
}

/// Integral over [0, dt] of the normalized outer product of the forward
/// message propagated from the left boundary value `a0` and the backward
/// message propagated from the right boundary value `b1`, both evolving under
/// the generator `g`. The grid doubles until the result settles. Works for
/// sub-stochastic generators too, so callers may fold loss terms into the
/// diagonal.
pub(crate) fn integrate_outer(
    g: &DMatrix<f64>,
    a0: &DVector<f64>,
    b1: &DVector<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    if dt == 0.0 {
        return Ok(DMatrix::zeros(a0.len(), a0.len()));
    }
    let mut prev: Option<DMatrix<f64>> = None;
    let mut steps = MIN_STEPS;
    loop {
        let integral = simpson_outer(g, a0, b1, dt, steps)?;
        let accept = match &prev {
            Some(p) => rel_change(p, &integral) < REL_TOL || steps >= MAX_STEPS,
            None => false,
        };
        if accept {
            return Ok(integral);
        }
        prev = Some(integral);
        steps *= 2;
    }
}

/// Composite Simpson over [0, dt] of the normalized outer product of the
/// forward message propagated from the left and the backward message
/// propagated from the right.
fn simpson_outer(
    g: &DMatrix<f64>,
    a0: &DVector<f64>,
    b1: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let n = a0.len();
    let h = dt / steps as f64;
    let e = expm(&(g * h))?;

    // Backward message at every node, stepped from the right end.
    let mut b_nodes = vec![DVector::zeros(n); steps + 1];
    b_nodes[steps] = b1.clone();
    for j in (0..steps).rev() {
        let mut v = &e * &b_nodes[j + 1];
        let s = v.sum();
        if s > 0.0 {
            v /= s;
        }
        b_nodes[j] = v;
    }

    let mut out = DMatrix::zeros(n, n);
    let mut a = a0.clone();
    for j in 0..=steps {
        // Simpson weights h/3 * (1, 4, 2, ..., 4, 1).
        let w = h / 3.0
            * if j == 0 || j == steps {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
        let b = &b_nodes[j];
        let denom = a.dot(b);
        if denom > 0.0 {
            let scale = w / denom;
            for x in 0..n {
                let ax = a[x];
                if ax == 0.0 {
                    continue;
                }
                for y in 0..n {
                    out[(x, y)] += scale * ax * b[y];
                }
            }
        }
        if j < steps {
            let mut next = e.tr_mul(&a);
            let s = next.sum();
            if s > 0.0 {
                next /= s;
            }
            a = next;
        }
    }
    Ok(out)
}

fn rel_change(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        diff = diff.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::evidence::{EvidenceSegment, EvidenceTrajectory};
    use crate::ctmc::{
        message_pass, sample_trajectory, suff_stats_complete, IntensityMatrix,
    };
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn two_state(q01: f64, q10: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, q01, q10, 0.0])).unwrap()
    }

    #[test]
    fn fully_observed_expectations_equal_empirical_statistics() {
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 2.0, 1.0, 0.5, 0.0, 1.5, 3.0, 1.0, 0.0],
        ))
        .unwrap();
        let mut rng = crate::rng::substream(61, "ess-full-test");
        for _ in 0..5 {
            let traj = sample_trajectory(&q, &[1.0, 1.0, 1.0], 0.0, 6.0, &mut rng).unwrap();
            let ev = EvidenceTrajectory::from_trajectory(&traj, 3).unwrap();
            let mp = message_pass(&q, &ev).unwrap();
            let expected = expected_suff_stats(&mp).unwrap();
            let empirical = suff_stats_complete(&traj, 3).unwrap();
            for x in 0..3 {
                assert_abs_diff_eq!(expected.t[x], empirical.t[x], epsilon = 1e-9);
                for y in 0..3 {
                    assert_abs_diff_eq!(expected.m[(x, y)], empirical.m[(x, y)], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn dwell_expectations_partition_the_window() {
        let q = two_state(0.7, 1.1);
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            4.0,
            vec![
                EvidenceSegment::interval(vec![0], 0.0, 1.0),
                EvidenceSegment::interval(vec![1], 3.0, 1.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        let stats = expected_suff_stats(&mp).unwrap();
        assert_abs_diff_eq!(stats.t.sum(), 4.0, epsilon = 1e-9);
        assert!(stats.m[(0, 1)] >= 1.0, "at least the forced net transition");
    }

    /// Discretized forward-backward oracle on a fixed grid: the chain is
    /// approximated by X_{k+1} ~ (I + Q h) given X_k, evidence restricts
    /// grid slices, and expectations are accumulated from the discrete
    /// posteriors. Independent of the matrix-exponential and quadrature
    /// paths used by the implementation.
    fn grid_oracle(
        q: &IntensityMatrix,
        horizon: f64,
        h: f64,
        allowed_at: impl Fn(f64) -> Vec<usize>,
    ) -> (SufficientStatistics, f64) {
        let n = q.n();
        let steps = (horizon / h).round() as usize;
        let mut p_step = DMatrix::<f64>::identity(n, n);
        for x in 0..n {
            for y in 0..n {
                p_step[(x, y)] += q.rate(x, y) * h;
            }
        }
        let masks: Vec<Vec<f64>> = (0..=steps)
            .map(|k| {
                let set = allowed_at(k as f64 * h);
                (0..n).map(|x| if set.contains(&x) { 1.0 } else { 0.0 }).collect()
            })
            .collect();

        let mut alphas = Vec::with_capacity(steps + 1);
        let mut scales = Vec::with_capacity(steps + 1);
        let allowed0: f64 = masks[0].iter().sum();
        let mut alpha: Vec<f64> = masks[0].iter().map(|m| m / allowed0).collect();
        alphas.push(alpha.clone());
        scales.push(0.0f64);
        let mut log_p = 0.0;
        for k in 1..=steps {
            let mut next = vec![0.0; n];
            for y in 0..n {
                let mut v = 0.0;
                for x in 0..n {
                    v += alpha[x] * p_step[(x, y)];
                }
                next[y] = v * masks[k][y];
            }
            let s: f64 = next.iter().sum();
            for v in next.iter_mut() {
                *v /= s;
            }
            log_p += s.ln();
            alpha = next;
            alphas.push(alpha.clone());
            scales.push(log_p);
        }

        let mut beta = vec![1.0 / n as f64; n];
        let mut betas = vec![beta.clone(); steps + 1];
        for k in (0..steps).rev() {
            let mut prev = vec![0.0; n];
            for x in 0..n {
                let mut v = 0.0;
                for y in 0..n {
                    v += p_step[(x, y)] * masks[k + 1][y] * beta[y];
                }
                prev[x] = v;
            }
            let s: f64 = prev.iter().sum();
            for v in prev.iter_mut() {
                *v /= s;
            }
            beta = prev;
            betas[k] = beta.clone();
        }

        let mut stats = SufficientStatistics::zeros(n);
        for k in 0..steps {
            // Posterior of (X_k, X_{k+1}) over one grid step.
            let mut xi = DMatrix::<f64>::zeros(n, n);
            let mut total = 0.0;
            for x in 0..n {
                for y in 0..n {
                    let v = alphas[k][x] * p_step[(x, y)] * masks[k + 1][y] * betas[k + 1][y];
                    xi[(x, y)] = v;
                    total += v;
                }
            }
            xi /= total;
            for x in 0..n {
                for y in 0..n {
                    if x == y {
                        stats.t[x] += xi[(x, x)] * h;
                    } else {
                        stats.m[(x, y)] += xi[(x, y)];
                        // Half the step is attributed to each endpoint state.
                        stats.t[x] += xi[(x, y)] * h * 0.5;
                        stats.t[y] += xi[(x, y)] * h * 0.5;
                    }
                }
            }
        }
        (stats, log_p)
    }

    #[test]
    fn hidden_interval_expectations_match_grid_oracle() {
        let q = two_state(0.8, 1.3);
        // Observed in 0 for a while, hidden in the middle, observed in 1.
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            3.0,
            vec![
                EvidenceSegment::interval(vec![0], 0.0, 1.0),
                EvidenceSegment::interval(vec![1], 2.0, 1.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        let stats = expected_suff_stats(&mp).unwrap();

        let (oracle, oracle_log_p) = grid_oracle(&q, 3.0, 1e-4, |t| {
            if t <= 1.0 {
                vec![0]
            } else if t >= 2.0 {
                vec![1]
            } else {
                vec![0, 1]
            }
        });

        assert_abs_diff_eq!(mp.loglik(), oracle_log_p, epsilon = 1e-3);
        for x in 0..2 {
            assert_abs_diff_eq!(stats.t[x], oracle.t[x], epsilon = 1e-3);
            for y in 0..2 {
                assert_abs_diff_eq!(stats.m[(x, y)], oracle.m[(x, y)], epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn impossible_evidence_propagates() {
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 0.0, 1.0, 0.0],
        ))
        .unwrap();
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            2.0,
            vec![
                EvidenceSegment::interval(vec![0], 0.0, 1.0),
                EvidenceSegment::interval(vec![1], 1.0, 1.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        assert!(matches!(
            expected_suff_stats(&mp),
            Err(Error::ImpossibleEvidence)
        ));
    }
}
