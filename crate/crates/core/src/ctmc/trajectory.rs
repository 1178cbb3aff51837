//! Sampled paths of a chain and complete-data estimation.
//!
//! A trajectory is a piecewise-constant path. Its sufficient statistics are
//! the total dwell time per state and the count of each transition; the
//! complete-data log-likelihood and its maximizer are closed forms in those
//! statistics.

use nalgebra::DMatrix;
use nalgebra::DVector;
use rand::Rng;

use super::IntensityMatrix;
use crate::rng::sample_exp;
use crate::{Error, Result};

/// Pseudo-statistics added before every rate division so that unvisited
/// states keep a small positive rate instead of an exact zero, which would
/// make future evidence impossible.
pub(crate) const PSEUDO_COUNT: f64 = 1e-3;

/// A piecewise-constant path: a start time and (state, dwell) segments.
/// Consecutive segments hold different states; every dwell is positive. The
/// final dwell is the time to the end of the observation window, not an
/// exponential sojourn.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: f64,
    segments: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn new(start: f64, segments: Vec<(usize, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidTrajectory("no segments".into()));
        }
        for (i, &(state, dwell)) in segments.iter().enumerate() {
            if !(dwell > 0.0) || !dwell.is_finite() {
                return Err(Error::InvalidTrajectory(format!(
                    "segment {i} (state {state}) has dwell {dwell}, expected positive"
                )));
            }
            if i > 0 && segments[i - 1].0 == state {
                return Err(Error::InvalidTrajectory(format!(
                    "segments {} and {i} both hold state {state}",
                    i - 1
                )));
            }
        }
        Ok(Self { start, segments })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|&(_, d)| d).sum()
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }

    pub fn segments(&self) -> &[(usize, f64)] {
        &self.segments
    }

    pub fn n_transitions(&self) -> usize {
        self.segments.len() - 1
    }

    /// State occupied at time t (right-continuous; the last state extends to
    /// the end of the window).
    pub fn state_at(&self, t: f64) -> Option<usize> {
        if t < self.start || t > self.end() {
            return None;
        }
        let mut clock = self.start;
        for &(state, dwell) in &self.segments {
            clock += dwell;
            if t < clock {
                return Some(state);
            }
        }
        Some(self.segments.last().unwrap().0)
    }

    /// Largest state index plus one; callers with a fixed state space should
    /// pass their own size to the statistics instead.
    pub fn max_state(&self) -> usize {
        self.segments.iter().map(|&(s, _)| s).max().unwrap()
    }
}

/// Sample a path of duration `horizon` starting at `start`, with the initial
/// state drawn from `initial`.
pub fn sample_trajectory<R: Rng>(
    q: &IntensityMatrix,
    initial: &[f64],
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut state = sample_categorical(initial, rng)?;
    if state >= q.n() {
        return Err(Error::InvalidArgument(format!(
            "initial distribution has {} entries for a {}-state chain",
            initial.len(),
            q.n()
        )));
    }
    let end = start + horizon;
    let mut clock = start;
    let mut segments = Vec::new();
    loop {
        let dwell = sample_exp(rng, q.exit_rate(state));
        if clock + dwell >= end {
            segments.push((state, end - clock));
            break;
        }
        segments.push((state, dwell));
        clock += dwell;
        state = sample_successor(q, state, rng);
    }
    Trajectory::new(start, segments)
}

pub(crate) fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !total.is_finite() || total <= 0.0 || weights.iter().any(|&w| w < 0.0)
    {
        return Err(Error::InvalidArgument(
            "categorical weights must be nonnegative with positive sum".into(),
        ));
    }
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.len() - 1)
}

pub(crate) fn sample_successor<R: Rng>(q: &IntensityMatrix, from: usize, rng: &mut R) -> usize {
    let n = q.n();
    let exit = q.exit_rate(from);
    let mut u = rng.gen_range(0.0..exit);
    for y in 0..n {
        if y == from {
            continue;
        }
        let r = q.rate(from, y);
        if u < r {
            return y;
        }
        u -= r;
    }
    // Rounding fallback: the last positive-rate successor.
    (0..n).rev().find(|&y| y != from && q.rate(from, y) > 0.0).unwrap_or(from)
}

/// Dwell time per state and transition counts of one or more complete paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStatistics {
    /// Total time spent in each state.
    pub t: DVector<f64>,
    /// m[(x, y)] counts transitions x -> y; the diagonal stays zero.
    pub m: DMatrix<f64>,
}

impl SufficientStatistics {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: DVector::zeros(n),
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    /// Total transitions out of x.
    pub fn m_out(&self, x: usize) -> f64 {
        self.m.row(x).sum()
    }

    pub fn add(&mut self, other: &SufficientStatistics) {
        self.t += &other.t;
        self.m += &other.m;
    }

    pub fn add_scaled(&mut self, other: &SufficientStatistics, w: f64) {
        self.t.zip_apply(&other.t, |a, b| *a += w * b);
        self.m.zip_apply(&other.m, |a, b| *a += w * b);
    }
}

/// Accumulate dwell times and transition counts of a complete path over a
/// state space of the given size.
pub fn suff_stats_complete(traj: &Trajectory, n: usize) -> Result<SufficientStatistics> {
    let mut stats = SufficientStatistics::zeros(n);
    add_trajectory_stats(&mut stats, traj)?;
    Ok(stats)
}

pub(crate) fn add_trajectory_stats(
    stats: &mut SufficientStatistics,
    traj: &Trajectory,
) -> Result<()> {
    let n = stats.n();
    let segments = traj.segments();
    for (i, &(state, dwell)) in segments.iter().enumerate() {
        if state >= n {
            return Err(Error::InvalidTrajectory(format!(
                "state {state} out of range for {n}-state chain"
            )));
        }
        stats.t[state] += dwell;
        if i + 1 < segments.len() {
            stats.m[(state, segments[i + 1].0)] += 1.0;
        }
    }
    Ok(())
}

/// Complete-data log-likelihood: sum over transitions of log rate, minus the
/// exit rate weighted by dwell time. Returns negative infinity when an
/// observed transition has rate zero.
pub fn loglik_complete(q: &IntensityMatrix, stats: &SufficientStatistics) -> f64 {
    let n = q.n();
    debug_assert_eq!(stats.n(), n);
    let mut ll = 0.0;
    for x in 0..n {
        ll -= q.exit_rate(x) * stats.t[x];
        for y in 0..n {
            if y == x {
                continue;
            }
            let m = stats.m[(x, y)];
            if m > 0.0 {
                let r = q.rate(x, y);
                if r <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += m * r.ln();
            }
        }
    }
    ll
}

/// Maximum-likelihood intensity matrix from complete-data statistics, with
/// `PSEUDO_COUNT` added to the dwell of every state and spread over the
/// transition counts of its successors before dividing.
pub fn mle_complete(stats: &SufficientStatistics) -> Result<IntensityMatrix> {
    let n = stats.n();
    let mut rates = DMatrix::zeros(n, n);
    for x in 0..n {
        let t = stats.t[x] + PSEUDO_COUNT;
        for y in 0..n {
            if y == x {
                continue;
            }
            let m = stats.m[(x, y)] + PSEUDO_COUNT / (n - 1).max(1) as f64;
            rates[(x, y)] = m / t;
        }
    }
    IntensityMatrix::from_rates(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn three_state() -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 2.0, 1.0, 0.5, 0.0, 1.5, 3.0, 1.0, 0.0],
        ))
        .unwrap()
    }

    #[test]
    fn hand_counted_statistics() {
        let traj =
            Trajectory::new(0.0, vec![(0, 1.5), (1, 0.5), (0, 1.0)]).unwrap();
        let stats = suff_stats_complete(&traj, 2).unwrap();
        assert_abs_diff_eq!(stats.t[0], 2.5);
        assert_abs_diff_eq!(stats.t[1], 0.5);
        assert_abs_diff_eq!(stats.m[(0, 1)], 1.0);
        assert_abs_diff_eq!(stats.m[(1, 0)], 1.0);
        assert_abs_diff_eq!(stats.m[(0, 0)], 0.0);
        assert_eq!(traj.n_transitions(), 2);
        assert_abs_diff_eq!(traj.duration(), 3.0);
    }

    #[test]
    fn repeated_state_segments_are_rejected() {
        assert!(Trajectory::new(0.0, vec![(0, 1.0), (0, 1.0)]).is_err());
        assert!(Trajectory::new(0.0, vec![(0, 0.0)]).is_err());
    }

    #[test]
    fn state_at_walks_segments() {
        let traj = Trajectory::new(1.0, vec![(2, 1.0), (0, 2.0)]).unwrap();
        assert_eq!(traj.state_at(1.5), Some(2));
        assert_eq!(traj.state_at(2.5), Some(0));
        assert_eq!(traj.state_at(4.0), Some(0));
        assert_eq!(traj.state_at(0.5), None);
    }

    #[test]
    fn sampled_dwell_times_match_exponential_mean() {
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]))
            .unwrap();
        let mut rng = crate::rng::substream(17, "dwell-test");
        let mut dwells = Vec::new();
        while dwells.len() < 20_000 {
            let traj = sample_trajectory(&q, &[1.0, 0.0], 0.0, 500.0, &mut rng).unwrap();
            let segs = traj.segments();
            // Drop the final horizon-truncated dwell.
            dwells.extend(segs[..segs.len() - 1].iter().map(|&(_, d)| d));
        }
        let n = dwells.len() as f64;
        let mean: f64 = dwells.iter().sum::<f64>() / n;
        let se = 0.5 / n.sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn successor_frequencies_match_rates() {
        let q = three_state();
        let mut rng = crate::rng::substream(23, "successor-test");
        let mut from0 = [0.0f64; 3];
        for _ in 0..200 {
            let traj = sample_trajectory(&q, &[1.0, 1.0, 1.0], 0.0, 50.0, &mut rng).unwrap();
            let segs = traj.segments();
            for i in 0..segs.len() - 1 {
                if segs[i].0 == 0 {
                    from0[segs[i + 1].0] += 1.0;
                }
            }
        }
        let total: f64 = from0.iter().sum();
        assert!(total > 3_000.0);
        for (y, expected) in [(1, 2.0 / 3.0), (2, 1.0 / 3.0)] {
            let p = from0[y] / total;
            let se = (expected * (1.0 - expected) / total).sqrt();
            assert!((p - expected).abs() < 3.0 * se, "state {y}: {p} vs {expected}");
        }
    }

    #[test]
    fn mle_recovers_generator_rates() {
        let q = three_state();
        let mut rng = crate::rng::substream(31, "mle-test");
        let traj = sample_trajectory(&q, &[1.0, 0.0, 0.0], 0.0, 3_000.0, &mut rng).unwrap();
        let stats = suff_stats_complete(&traj, 3).unwrap();
        let fit = mle_complete(&stats).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                if x != y {
                    let rel = (fit.rate(x, y) - q.rate(x, y)).abs() / q.rate(x, y);
                    assert!(rel < 0.10, "rate ({x},{y}): {} vs {}", fit.rate(x, y), q.rate(x, y));
                }
            }
        }
    }

    #[test]
    fn mle_maximizes_complete_likelihood() {
        let q = three_state();
        let mut rng = crate::rng::substream(37, "mle-max-test");
        let traj = sample_trajectory(&q, &[1.0, 0.0, 0.0], 0.0, 500.0, &mut rng).unwrap();
        let stats = suff_stats_complete(&traj, 3).unwrap();
        let fit = mle_complete(&stats).unwrap();
        let base = loglik_complete(&fit, &stats);
        for x in 0..3 {
            for y in 0..3 {
                if x == y {
                    continue;
                }
                for scale in [0.99, 1.01] {
                    let mut rates = fit.matrix().clone();
                    rates[(x, y)] *= scale;
                    let perturbed = IntensityMatrix::from_rates(rates).unwrap();
                    assert!(
                        loglik_complete(&perturbed, &stats) < base,
                        "perturbing ({x},{y}) by {scale} did not lower the likelihood"
                    );
                }
            }
        }
    }

    #[test]
    fn true_generator_beats_perturbed_on_average() {
        let q = three_state();
        let mut wrong_rates = q.matrix().clone();
        wrong_rates[(0, 1)] *= 3.0;
        wrong_rates[(2, 0)] *= 0.3;
        let wrong = IntensityMatrix::from_rates(wrong_rates).unwrap();
        let mut rng = crate::rng::substream(41, "dominance-test");
        let mut margin = 0.0;
        for _ in 0..50 {
            let traj = sample_trajectory(&q, &[1.0, 1.0, 1.0], 0.0, 40.0, &mut rng).unwrap();
            let stats = suff_stats_complete(&traj, 3).unwrap();
            margin += loglik_complete(&q, &stats) - loglik_complete(&wrong, &stats);
        }
        assert!(margin > 0.0, "true model did not dominate: {margin}");
    }

    #[test]
    fn zero_rate_observed_transition_is_impossible() {
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 0.0, 1.0, 0.0],
        ))
        .unwrap();
        let mut stats = SufficientStatistics::zeros(2);
        stats.t[0] = 1.0;
        stats.m[(0, 1)] = 1.0;
        assert_eq!(loglik_complete(&q, &stats), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn dwell_times_partition_the_horizon(seed in 0u64..1000, horizon in 0.5f64..30.0) {
            let q = three_state();
            let mut rng = crate::rng::substream(seed, "partition-test");
            let traj = sample_trajectory(&q, &[1.0, 1.0, 1.0], 0.0, horizon, &mut rng).unwrap();
            let stats = suff_stats_complete(&traj, 3).unwrap();
            prop_assert!((stats.t.sum() - horizon).abs() < 1e-9);
            prop_assert_eq!(traj.n_transitions() as f64, stats.m.sum());
        }
    }
}
