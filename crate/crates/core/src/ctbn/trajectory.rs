//! Complete multi-variable paths: an initial assignment plus a stream of
//! single-variable change events.

use super::model::{joint_index, CtbnModel};
use crate::ctmc::{EvidenceSegment, EvidenceTrajectory, Trajectory};
use crate::{Error, Result};

/// One variable changing value at an instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEvent {
    pub time: f64,
    pub variable: usize,
    pub value: usize,
}

/// A fully observed path over [0, horizon]: every event changes exactly one
/// variable and no two events share a timestamp.
#[derive(Debug, Clone)]
pub struct JointTrajectory {
    initial: Vec<usize>,
    events: Vec<JointEvent>,
    horizon: f64,
}

impl JointTrajectory {
    pub fn new(initial: Vec<usize>, events: Vec<JointEvent>, horizon: f64) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::InvalidTrajectory("no variables".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidTrajectory(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let mut values = initial.clone();
        let mut prev = 0.0;
        for (k, e) in events.iter().enumerate() {
            if !(e.time > prev) || e.time >= horizon {
                return Err(Error::InvalidTrajectory(format!(
                    "event {k} at time {} out of order or outside (0, {horizon})",
                    e.time
                )));
            }
            if e.variable >= values.len() {
                return Err(Error::InvalidTrajectory(format!(
                    "event {k} names variable {} of {}",
                    e.variable,
                    values.len()
                )));
            }
            if e.value == values[e.variable] {
                return Err(Error::InvalidTrajectory(format!(
                    "event {k} does not change variable {}",
                    e.variable
                )));
            }
            values[e.variable] = e.value;
            prev = e.time;
        }
        Ok(JointTrajectory {
            initial,
            events,
            horizon,
        })
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn events(&self) -> &[JointEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_variables(&self) -> usize {
        self.initial.len()
    }

    /// Full assignment right after the k-th event (k = 0 means the initial
    /// assignment).
    pub fn assignment_after(&self, k: usize) -> Vec<usize> {
        let mut values = self.initial.clone();
        for e in &self.events[..k] {
            values[e.variable] = e.value;
        }
        values
    }

    /// The path of one variable as a flat single-chain trajectory.
    pub fn marginal(&self, variable: usize) -> Result<Trajectory> {
        if variable >= self.n_variables() {
            return Err(Error::InvalidArgument(format!(
                "variable {variable} of {}",
                self.n_variables()
            )));
        }
        let mut segments = Vec::new();
        let mut state = self.initial[variable];
        let mut since = 0.0;
        for e in &self.events {
            if e.variable == variable {
                segments.push((state, e.time - since));
                state = e.value;
                since = e.time;
            }
        }
        segments.push((state, self.horizon - since));
        Trajectory::new(0.0, segments)
    }

    /// The same path re-indexed over the joint state space of `sizes`.
    pub fn flatten(&self, sizes: &[usize]) -> Result<Trajectory> {
        if sizes.len() != self.n_variables() {
            return Err(Error::InvalidArgument(format!(
                "{} sizes for {} variables",
                sizes.len(),
                self.n_variables()
            )));
        }
        if let Some(e) = self.events.iter().find(|e| e.value >= sizes[e.variable]) {
            return Err(Error::InvalidTrajectory(format!(
                "variable {} takes value {} of {}",
                e.variable, e.value, sizes[e.variable]
            )));
        }
        let mut values = self.initial.clone();
        if values.iter().zip(sizes).any(|(&v, &s)| v >= s) {
            return Err(Error::InvalidTrajectory(
                "initial assignment outside the state space".into(),
            ));
        }
        let mut segments = Vec::new();
        let mut since = 0.0;
        for e in &self.events {
            segments.push((joint_index(&values, sizes), e.time - since));
            values[e.variable] = e.value;
            since = e.time;
        }
        segments.push((joint_index(&values, sizes), self.horizon - since));
        Trajectory::new(0.0, segments)
    }
}

/// Evidence over the joint state space that pins the `observed` variables to
/// their paths in `traj` and leaves the rest free. Observed-variable events
/// become forced jumps; hidden variables never constrain the allowed set.
pub fn joint_evidence(
    model: &CtbnModel,
    traj: &JointTrajectory,
    observed: &[usize],
) -> Result<EvidenceTrajectory> {
    let n_vars = model.n_variables();
    if traj.n_variables() != n_vars {
        return Err(Error::InvalidArgument(format!(
            "trajectory over {} variables for a {}-variable model",
            traj.n_variables(),
            n_vars
        )));
    }
    let size = model.joint_size().ok_or(Error::StateSpaceCap {
        size: usize::MAX,
        cap: usize::MAX,
    })?;
    let mut is_observed = vec![false; n_vars];
    for &v in observed {
        if v >= n_vars {
            return Err(Error::InvalidArgument(format!(
                "observed variable {v} of {n_vars}"
            )));
        }
        is_observed[v] = true;
    }
    let sizes = model.sizes();
    let mut values = traj.initial().to_vec();
    let mut segments = Vec::new();
    let mut since = 0.0;
    let mut push = |values: &[usize], from: f64, to: f64| {
        let states: Vec<usize> = (0..size)
            .filter(|&x| {
                let mut rest = x;
                for (i, &s) in sizes.iter().enumerate() {
                    let digit = rest % s;
                    rest /= s;
                    if is_observed[i] && digit != values[i] {
                        return false;
                    }
                }
                true
            })
            .collect();
        segments.push(EvidenceSegment::interval(states, from, to - from));
    };
    for e in traj.events() {
        if is_observed[e.variable] {
            push(&values, since, e.time);
            since = e.time;
        }
        values[e.variable] = e.value;
    }
    push(&values, since, traj.horizon());
    EvidenceTrajectory::new(size, 0.0, traj.horizon(), segments)
}
