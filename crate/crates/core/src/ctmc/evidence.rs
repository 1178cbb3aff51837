//! Partial observations of a chain over a window.
//!
//! Evidence is a list of segments, each confining the chain to a state subset
//! over `[t, t + dt]`; `dt = 0` is point evidence at an instant. Gaps between
//! segments leave the chain unrestricted. The compiled form used by the
//! message pass turns the segment list into breakpoints, per-interval allowed
//! sets, and boundary operators.

use crate::{Error, Result};

/// Largest gap or overlap treated as rounding noise when segments are meant
/// to touch exactly; far below any physical event spacing.
const CONTIGUITY_SLOP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSegment {
    /// Allowed states, sorted and deduplicated on construction.
    pub states: Vec<usize>,
    pub t: f64,
    pub dt: f64,
}

impl EvidenceSegment {
    pub fn interval(states: Vec<usize>, t: f64, dt: f64) -> Self {
        Self { states, t, dt }
    }

    pub fn point(states: Vec<usize>, t: f64) -> Self {
        Self { states, t, dt: 0.0 }
    }
}

/// Ordered, non-overlapping evidence segments over `[start, end]` for an
/// `n`-state chain.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceTrajectory {
    n: usize,
    start: f64,
    end: f64,
    segments: Vec<EvidenceSegment>,
}

impl EvidenceTrajectory {
    pub fn new(n: usize, start: f64, end: f64, mut segments: Vec<EvidenceSegment>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidEvidence("state space must be nonempty".into()));
        }
        if !(end > start) && !(end == start && segments.iter().all(|s| s.dt == 0.0)) {
            return Err(Error::InvalidEvidence(format!(
                "window [{start}, {end}] must have positive length"
            )));
        }
        let mut clock = start;
        for (i, seg) in segments.iter_mut().enumerate() {
            seg.states.sort_unstable();
            seg.states.dedup();
            if seg.states.is_empty() {
                return Err(Error::InvalidEvidence(format!("segment {i} allows no states")));
            }
            if *seg.states.last().unwrap() >= n {
                return Err(Error::InvalidEvidence(format!(
                    "segment {i} names state {} in a {n}-state chain",
                    seg.states.last().unwrap()
                )));
            }
            if !(seg.dt >= 0.0) || !seg.dt.is_finite() || !seg.t.is_finite() {
                return Err(Error::InvalidEvidence(format!(
                    "segment {i} has non-finite or negative extent"
                )));
            }
            // Absorb rounding slop from contiguous (t, dt) re-accumulation;
            // real overlaps are far larger than this.
            if seg.t < clock && clock - seg.t <= CONTIGUITY_SLOP {
                seg.dt = (seg.t + seg.dt - clock).max(0.0);
                seg.t = clock;
            }
            let over = seg.t + seg.dt - end;
            if over > 0.0 && over <= CONTIGUITY_SLOP {
                seg.dt = (end - seg.t).max(0.0);
            }
            if seg.t < clock && !(seg.dt == 0.0 && seg.t == clock) {
                return Err(Error::InvalidEvidence(format!(
                    "segment {i} at t = {} overlaps or precedes the previous segment",
                    seg.t
                )));
            }
            if seg.t < start || seg.t + seg.dt > end {
                return Err(Error::InvalidEvidence(format!(
                    "segment {i} extends outside [{start}, {end}]"
                )));
            }
            clock = clock.max(seg.t + seg.dt);
        }
        Ok(Self { n, start, end, segments })
    }

    /// Evidence with no restrictions over the window.
    pub fn unrestricted(n: usize, start: f64, end: f64) -> Result<Self> {
        Self::new(n, start, end, Vec::new())
    }

    /// Full observation of a complete path: one singleton segment per dwell.
    pub fn from_trajectory(traj: &super::Trajectory, n: usize) -> Result<Self> {
        let mut segments = Vec::with_capacity(traj.segments().len());
        let mut clock = traj.start();
        for &(state, dwell) in traj.segments() {
            if state >= n {
                return Err(Error::InvalidTrajectory(format!(
                    "state {state} out of range for {n}-state chain"
                )));
            }
            segments.push(EvidenceSegment::interval(vec![state], clock, dwell));
            clock += dwell;
        }
        Self::new(n, traj.start(), clock, segments)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn segments(&self) -> &[EvidenceSegment] {
        &self.segments
    }

    pub(crate) fn compile(&self) -> Compiled {
        let full: Vec<usize> = (0..self.n).collect();
        let mut times = vec![self.start, self.end];
        for seg in &self.segments {
            times.push(seg.t);
            times.push(seg.t + seg.dt);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();

        // Allowed set on each open interval: the covering interval segment,
        // or the full space inside gaps.
        let n_int = times.len() - 1;
        let mut interval_states = vec![full.clone(); n_int];
        for seg in &self.segments {
            if seg.dt == 0.0 {
                continue;
            }
            for (i, states) in interval_states.iter_mut().enumerate() {
                if seg.t <= times[i] && times[i + 1] <= seg.t + seg.dt {
                    *states = seg.states.clone();
                }
            }
        }

        // Point restrictions at each breakpoint.
        let mut point_sets: Vec<Option<Vec<usize>>> = vec![None; times.len()];
        for seg in &self.segments {
            if seg.dt > 0.0 {
                continue;
            }
            let i = times.iter().position(|&t| t == seg.t).unwrap();
            point_sets[i] = Some(match point_sets[i].take() {
                None => seg.states.clone(),
                Some(prev) => intersect(&prev, &seg.states),
            });
        }

        let mut ops = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let prev = if i > 0 { Some(&interval_states[i - 1]) } else { None };
            let next = if i < n_int { Some(&interval_states[i]) } else { None };
            let point = point_sets[i].as_ref();
            let op = match (prev, next) {
                (None, Some(next)) => {
                    BoundaryOp::Restrict(restrict_with_point(next, point))
                }
                (Some(prev), None) => {
                    BoundaryOp::Restrict(restrict_with_point(prev, point))
                }
                (Some(prev), Some(next)) => {
                    if intersect(prev, next).is_empty() {
                        // The evidence forces a transition at this instant.
                        BoundaryOp::Jump {
                            from: prev.clone(),
                            to: restrict_with_point(next, point),
                        }
                    } else {
                        BoundaryOp::Restrict(restrict_with_point(next, point))
                    }
                }
                (None, None) => BoundaryOp::Restrict(restrict_with_point(&full, point)),
            };
            ops.push(op);
        }

        Compiled { times, interval_states, ops }
    }
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.contains(x)).collect()
}

fn restrict_with_point(base: &[usize], point: Option<&Vec<usize>>) -> Vec<usize> {
    match point {
        None => base.to_vec(),
        Some(p) => intersect(base, p),
    }
}

/// Operator applied to the forward message at a breakpoint (and mirrored on
/// the backward message).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum BoundaryOp {
    /// Keep only the listed states.
    Restrict(Vec<usize>),
    /// An observed transition from one subset into a disjoint one; the
    /// message picks up the transition-rate density.
    Jump { from: Vec<usize>, to: Vec<usize> },
}

/// Breakpoint timeline of an evidence trajectory: `times` has K+1 entries,
/// `interval_states[i]` constrains the open interval (times[i], times[i+1]),
/// and `ops[i]` acts at times[i].
pub(crate) struct Compiled {
    pub times: Vec<f64>,
    pub interval_states: Vec<Vec<usize>>,
    pub ops: Vec<BoundaryOp>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::Trajectory;

    #[test]
    fn full_observation_compiles_to_jumps() {
        let traj = Trajectory::new(0.0, vec![(0, 1.0), (1, 2.0)]).unwrap();
        let ev = EvidenceTrajectory::from_trajectory(&traj, 3).unwrap();
        let c = ev.compile();
        assert_eq!(c.times, vec![0.0, 1.0, 3.0]);
        assert_eq!(c.interval_states, vec![vec![0], vec![1]]);
        assert_eq!(c.ops[0], BoundaryOp::Restrict(vec![0]));
        assert_eq!(
            c.ops[1],
            BoundaryOp::Jump { from: vec![0], to: vec![1] }
        );
        assert_eq!(c.ops[2], BoundaryOp::Restrict(vec![1]));
    }

    #[test]
    fn gaps_are_unrestricted_and_overlaps_restrict() {
        let ev = EvidenceTrajectory::new(
            3,
            0.0,
            4.0,
            vec![
                EvidenceSegment::interval(vec![0, 1], 0.0, 1.0),
                EvidenceSegment::interval(vec![1, 2], 1.0, 1.0),
            ],
        )
        .unwrap();
        let c = ev.compile();
        assert_eq!(c.times, vec![0.0, 1.0, 2.0, 4.0]);
        assert_eq!(c.interval_states[2], vec![0, 1, 2]);
        // Overlapping change of subset restricts without a forced jump, and
        // leaving a segment into a gap lifts the restriction.
        assert_eq!(c.ops[1], BoundaryOp::Restrict(vec![1, 2]));
        assert_eq!(c.ops[2], BoundaryOp::Restrict(vec![0, 1, 2]));
    }

    #[test]
    fn point_evidence_lands_on_its_breakpoint() {
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
        let c = ev.compile();
        assert_eq!(c.times, vec![0.0, 1.0]);
        assert_eq!(c.ops[0], BoundaryOp::Restrict(vec![0]));
        assert_eq!(c.ops[1], BoundaryOp::Restrict(vec![1]));
        assert_eq!(c.interval_states[0], vec![0, 1]);
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let bad = EvidenceTrajectory::new(
            2,
            0.0,
            2.0,
            vec![
                EvidenceSegment::interval(vec![0], 0.0, 1.5),
                EvidenceSegment::interval(vec![1], 1.0, 1.0),
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn out_of_range_states_are_rejected() {
        let bad = EvidenceTrajectory::new(
            2,
            0.0,
            1.0,
            vec![EvidenceSegment::interval(vec![2], 0.0, 1.0)],
        );
        assert!(bad.is_err());
    }
}
