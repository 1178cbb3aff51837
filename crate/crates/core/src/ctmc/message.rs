//! Forward-backward message passing over partially observed trajectories.
//!
//! Within an evidence interval the chain evolves under Q restricted to the
//! allowed subset: transitions that would leave or enter the subset are
//! zeroed while diagonals keep their full exit rates, so surviving mass
//! accounts for the probability that no disallowed transition occurred.
//! Messages are renormalized at every breakpoint and the scale is carried in
//! log space; the forward and backward passes must agree on the log evidence.

use nalgebra::{DMatrix, DVector};

use super::evidence::{BoundaryOp, Compiled, EvidenceTrajectory};
use super::expm::expm;
use super::IntensityMatrix;
use crate::{Error, Result};

/// Q with transitions confined to `allowed`: entries outside the subset's
/// rows and columns are zero, diagonals inside keep their full exit rate.
pub(crate) fn restricted_generator(q: &IntensityMatrix, allowed: &[usize]) -> DMatrix<f64> {
    let n = q.n();
    let mut out = DMatrix::zeros(n, n);
    for &x in allowed {
        for &y in allowed {
            out[(x, y)] = q.rate(x, y);
        }
        out[(x, x)] = -q.exit_rate(x);
    }
    out
}

fn apply_op_left(q: &IntensityMatrix, op: &BoundaryOp, alpha: &DVector<f64>) -> DVector<f64> {
    let n = alpha.len();
    let mut out = DVector::zeros(n);
    match op {
        BoundaryOp::Restrict(states) => {
            for &x in states {
                out[x] = alpha[x];
            }
        }
        BoundaryOp::Jump { from, to } => {
            for &y in to {
                let mut v = 0.0;
                for &x in from {
                    if x != y {
                        v += alpha[x] * q.rate(x, y);
                    }
                }
                out[y] = v;
            }
        }
    }
    out
}

fn apply_op_right(q: &IntensityMatrix, op: &BoundaryOp, beta: &DVector<f64>) -> DVector<f64> {
    let n = beta.len();
    let mut out = DVector::zeros(n);
    match op {
        BoundaryOp::Restrict(states) => {
            for &x in states {
                out[x] = beta[x];
            }
        }
        BoundaryOp::Jump { from, to } => {
            for &x in from {
                let mut v = 0.0;
                for &y in to {
                    if y != x {
                        v += q.rate(x, y) * beta[y];
                    }
                }
                out[x] = v;
            }
        }
    }
    out
}

/// Normalize in place; returns the pre-normalization sum (zero on collapse).
fn normalize(v: &mut DVector<f64>) -> f64 {
    let s: f64 = v.sum();
    if s > 0.0 && s.is_finite() {
        *v /= s;
    }
    s
}

/// Messages of one forward-backward pass. Vectors are stored normalized per
/// breakpoint; `loglik` carries the accumulated scale.
pub struct MessagePass {
    q: IntensityMatrix,
    compiled: Compiled,
    /// Forward message just before the boundary operator at times[i].
    alpha_pre: Vec<DVector<f64>>,
    /// Forward message just after the operator.
    alpha_post: Vec<DVector<f64>>,
    /// Backward message covering evidence strictly after times[i].
    beta_post: Vec<DVector<f64>>,
    /// Backward message including the operator at times[i].
    beta_pre: Vec<DVector<f64>>,
    loglik: f64,
    loglik_backward: f64,
    collapsed: bool,
}

/// Run the forward and backward recursions for `ev` under `q`.
///
/// The initial state is taken uniform over the states allowed at the window
/// start. Impossible evidence is reported through a negative-infinity log
/// evidence, not an error.
pub fn message_pass(q: &IntensityMatrix, ev: &EvidenceTrajectory) -> Result<MessagePass> {
    message_pass_with_initial(q, ev, None)
}

/// Like `message_pass` but with an explicit initial distribution. The prior
/// mass lost to the restriction at the window start then counts toward the
/// log evidence; `None` keeps the conditional uniform-over-allowed convention.
pub fn message_pass_with_initial(
    q: &IntensityMatrix,
    ev: &EvidenceTrajectory,
    initial: Option<&DVector<f64>>,
) -> Result<MessagePass> {
    if ev.n() != q.n() {
        return Err(Error::InvalidEvidence(format!(
            "evidence over {} states given a {}-state chain",
            ev.n(),
            q.n()
        )));
    }
    let n = q.n();
    if let Some(pi) = initial {
        if pi.len() != n || pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "initial distribution must be nonnegative with one entry per state".into(),
            ));
        }
    }
    let compiled = ev.compile();
    let k = compiled.times.len() - 1;

    let mut alpha_pre = vec![DVector::zeros(n); k + 1];
    let mut alpha_post = vec![DVector::zeros(n); k + 1];
    let mut beta_post = vec![DVector::zeros(n); k + 1];
    let mut beta_pre = vec![DVector::zeros(n); k + 1];
    let mut collapsed = false;

    // Forward pass. With no explicit prior the restriction at the start is
    // folded into a uniform initial distribution without contributing a
    // scale factor; an explicit prior's restricted mass does contribute.
    let mut loglik = 0.0;
    let mut init_scale = 0.0;
    alpha_pre[0] = match initial {
        Some(pi) => pi.clone(),
        None => DVector::from_element(n, 1.0 / n as f64),
    };
    let mut v = apply_op_left(q, &compiled.ops[0], &alpha_pre[0]);
    let s0 = normalize(&mut v);
    if s0 <= 0.0 {
        collapsed = true;
    } else if initial.is_some() {
        init_scale = s0.ln();
        loglik += init_scale;
    }
    alpha_post[0] = v;
    if !collapsed {
        for i in 1..=k {
            let dt = compiled.times[i] - compiled.times[i - 1];
            let g = restricted_generator(q, &compiled.interval_states[i - 1]);
            let e = expm(&(g * dt))?;
            let mut pre = e.tr_mul(&alpha_post[i - 1]);
            let s1 = normalize(&mut pre);
            alpha_pre[i] = pre;
            if s1 <= 0.0 {
                collapsed = true;
                break;
            }
            let mut post = apply_op_left(q, &compiled.ops[i], &alpha_pre[i]);
            let s2 = normalize(&mut post);
            alpha_post[i] = post;
            if s2 <= 0.0 {
                collapsed = true;
                break;
            }
            loglik += s1.ln() + s2.ln();
        }
    }

    let mut loglik_backward = f64::NEG_INFINITY;
    if !collapsed {
        // Backward pass; the operator at the start is not applied because the
        // initial distribution already accounts for it.
        let mut scale = (n as f64).ln();
        beta_post[k] = DVector::from_element(n, 1.0 / n as f64);
        let mut ok = true;
        for i in (0..k).rev() {
            let mut pre = apply_op_right(q, &compiled.ops[i + 1], &beta_post[i + 1]);
            let s1 = normalize(&mut pre);
            beta_pre[i + 1] = pre;
            if s1 <= 0.0 {
                ok = false;
                break;
            }
            let dt = compiled.times[i + 1] - compiled.times[i];
            let g = restricted_generator(q, &compiled.interval_states[i]);
            let e = expm(&(g * dt))?;
            let mut post = &e * &beta_pre[i + 1];
            let s2 = normalize(&mut post);
            beta_post[i] = post;
            if s2 <= 0.0 {
                ok = false;
                break;
            }
            scale += s1.ln() + s2.ln();
        }
        if k == 0 {
            // Degenerate zero-length window: nothing to propagate.
            loglik_backward = loglik;
        } else if ok {
            let dot = alpha_post[0].dot(&beta_post[0]);
            if dot > 0.0 {
                loglik_backward = init_scale + scale + dot.ln();
            }
        }
        if !loglik_backward.is_finite() {
            collapsed = true;
        }
    }

    if collapsed {
        loglik = f64::NEG_INFINITY;
        loglik_backward = f64::NEG_INFINITY;
    }

    Ok(MessagePass {
        q: q.clone(),
        compiled,
        alpha_pre,
        alpha_post,
        beta_post,
        beta_pre,
        loglik,
        loglik_backward,
        collapsed,
    })
}

impl MessagePass {
    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn q(&self) -> &IntensityMatrix {
        &self.q
    }

    /// Log evidence from the forward pass; negative infinity when the
    /// evidence is impossible under the model.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Log evidence recomputed from the backward pass; agreement with
    /// `loglik` is a consistency check on the recursions.
    pub fn loglik_backward(&self) -> f64 {
        self.loglik_backward
    }

    pub fn collapsed(&self) -> bool {
        self.collapsed
    }

    pub fn start(&self) -> f64 {
        *self.compiled.times.first().unwrap()
    }

    pub fn end(&self) -> f64 {
        *self.compiled.times.last().unwrap()
    }

    pub(crate) fn compiled(&self) -> &Compiled {
        &self.compiled
    }

    pub(crate) fn alpha_pre(&self, i: usize) -> &DVector<f64> {
        &self.alpha_pre[i]
    }

    pub(crate) fn alpha_post(&self, i: usize) -> &DVector<f64> {
        &self.alpha_post[i]
    }

    pub(crate) fn beta_post(&self, i: usize) -> &DVector<f64> {
        &self.beta_post[i]
    }

    pub(crate) fn beta_pre(&self, i: usize) -> &DVector<f64> {
        &self.beta_pre[i]
    }

    /// Posterior state distribution at time t given all evidence. At a
    /// breakpoint the right limit is reported.
    pub fn smoothed_marginal(&self, t: f64) -> Result<DVector<f64>> {
        if self.collapsed {
            return Err(Error::ImpossibleEvidence);
        }
        let times = &self.compiled.times;
        if t < times[0] || t > *times.last().unwrap() {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside the evidence window [{}, {}]",
                times[0],
                times.last().unwrap()
            )));
        }
        if let Some(i) = times.iter().position(|&bt| bt == t) {
            let mut joint = self.alpha_post[i].component_mul(&self.beta_post[i]);
            if normalize(&mut joint) <= 0.0 {
                return Err(Error::Numerical("smoothed marginal collapsed".into()));
            }
            return Ok(joint);
        }
        let i = times.iter().rposition(|&bt| bt < t).unwrap();
        let g = restricted_generator(&self.q, &self.compiled.interval_states[i]);
        let e_left = expm(&(&g * (t - times[i])))?;
        let e_right = expm(&(&g * (times[i + 1] - t)))?;
        let a = e_left.tr_mul(&self.alpha_post[i]);
        let b = &e_right * &self.beta_pre[i + 1];
        let mut joint = a.component_mul(&b);
        if normalize(&mut joint) <= 0.0 {
            return Err(Error::Numerical("smoothed marginal collapsed".into()));
        }
        Ok(joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::evidence::EvidenceSegment;
    use crate::ctmc::{loglik_complete, sample_trajectory, suff_stats_complete, Trajectory};
    use approx::assert_abs_diff_eq;

    fn two_state(q01: f64, q10: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, q01, q10, 0.0])).unwrap()
    }

    fn three_state() -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 2.0, 1.0, 0.5, 0.0, 1.5, 3.0, 1.0, 0.0],
        ))
        .unwrap()
    }

    #[test]
    fn vacuous_evidence_has_probability_one() {
        let q = three_state();
        let ev = EvidenceTrajectory::unrestricted(3, 0.0, 5.0).unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        assert_abs_diff_eq!(mp.loglik(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mp.loglik_backward(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn point_evidence_matches_transition_probability_entry() {
        let q = two_state(1.3, 0.6);
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            1.0,
            vec![
                EvidenceSegment::point(vec![0], 0.0),
                EvidenceSegment::point(vec![1], 1.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        let p = q.transition_probabilities(1.0).unwrap();
        assert_abs_diff_eq!(mp.loglik(), p[(0, 1)].ln(), epsilon = 1e-10);
    }

    #[test]
    fn full_observation_reproduces_complete_data_likelihood() {
        let q = three_state();
        let mut rng = crate::rng::substream(53, "mp-full-test");
        for _ in 0..10 {
            let traj = sample_trajectory(&q, &[1.0, 1.0, 1.0], 0.0, 8.0, &mut rng).unwrap();
            let ev = EvidenceTrajectory::from_trajectory(&traj, 3).unwrap();
            let mp = message_pass(&q, &ev).unwrap();
            let stats = suff_stats_complete(&traj, 3).unwrap();
            assert_abs_diff_eq!(mp.loglik(), loglik_complete(&q, &stats), epsilon = 1e-8);
        }
    }

    #[test]
    fn forward_and_backward_totals_agree() {
        let q = three_state();
        let ev = EvidenceTrajectory::new(
            3,
            0.0,
            6.0,
            vec![
                EvidenceSegment::interval(vec![0], 0.0, 1.0),
                EvidenceSegment::interval(vec![1, 2], 2.0, 2.0),
                EvidenceSegment::point(vec![2], 5.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        assert!(mp.loglik().is_finite());
        assert_abs_diff_eq!(mp.loglik(), mp.loglik_backward(), epsilon = 1e-6);
    }

    #[test]
    fn impossible_evidence_signals_negative_infinity() {
        // No rate into state 1 from state 0 and a forced 0 -> 1 jump.
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 0.0, 1.0, 0.0],
        ))
        .unwrap();
        let traj = Trajectory::new(0.0, vec![(0, 1.0), (1, 1.0)]).unwrap();
        let ev = EvidenceTrajectory::from_trajectory(&traj, 2).unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        assert!(mp.collapsed());
        assert_eq!(mp.loglik(), f64::NEG_INFINITY);
    }

    #[test]
    fn smoothed_marginal_matches_direct_conditional() {
        let q = two_state(0.9, 0.4);
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            2.0,
            vec![
                EvidenceSegment::point(vec![0], 0.0),
                EvidenceSegment::point(vec![1], 2.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        let m = mp.smoothed_marginal(1.0).unwrap();
        let p = q.transition_probabilities(1.0).unwrap();
        let p2 = q.transition_probabilities(2.0).unwrap();
        for x in 0..2 {
            let expected = p[(0, x)] * p[(x, 1)] / p2[(0, 1)];
            assert_abs_diff_eq!(m[x], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn smoothed_marginal_far_from_endpoints_approaches_stationary() {
        let q = three_state();
        // Stationary distribution solved from pi Q = 0 with sum(pi) = 1.
        let n = 3;
        let mut a = q.matrix().transpose();
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a.lu().solve(&rhs).unwrap();

        let ev = EvidenceTrajectory::new(
            3,
            0.0,
            60.0,
            vec![
                EvidenceSegment::point(vec![0], 0.0),
                EvidenceSegment::point(vec![1], 60.0),
            ],
        )
        .unwrap();
        let mp = message_pass(&q, &ev).unwrap();
        let m = mp.smoothed_marginal(30.0).unwrap();
        for x in 0..3 {
            assert_abs_diff_eq!(m[x], pi[x], epsilon = 1e-6);
        }
    }

    #[test]
    fn explicit_initial_distribution_weights_the_start() {
        let q = two_state(1.3, 0.6);
        let ev = EvidenceTrajectory::new(
            2,
            0.0,
            1.0,
            vec![
                EvidenceSegment::point(vec![0], 0.0),
                EvidenceSegment::point(vec![1], 1.0),
            ],
        )
        .unwrap();
        let pi = DVector::from_column_slice(&[0.3, 0.7]);
        let mp = message_pass_with_initial(&q, &ev, Some(&pi)).unwrap();
        let p = q.transition_probabilities(1.0).unwrap();
        assert_abs_diff_eq!(mp.loglik(), (0.3 * p[(0, 1)]).ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(mp.loglik(), mp.loglik_backward(), epsilon = 1e-9);
    }

    #[test]
    fn mismatched_state_count_is_rejected() {
        let q = two_state(1.0, 1.0);
        let ev = EvidenceTrajectory::unrestricted(3, 0.0, 1.0).unwrap();
        assert!(message_pass(&q, &ev).is_err());
    }
}
