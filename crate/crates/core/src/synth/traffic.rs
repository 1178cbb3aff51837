//! Synthetic network traffic: sampling a traffic model into an event trace,
//! and planting anomalies in one.
//!
//! Injection follows a two-knob scheme: the anomaly occupies a window that is
//! a fraction alpha of the trace, starting somewhere in the first half, and
//! its template events are slowed by stretching inter-event gaps by 1/beta.
//! Ground truth records the injected window so scoring can be graded.

use rand::Rng;

use crate::ctbn::forward_sample_rng;
use crate::ctmc::Trajectory;
use crate::nids::{EventKind, PortKey, TrafficEvent, TrafficModel, TrafficTrace};
use crate::rng::substream;
use crate::{Error, Result};

/// Sample a trace of the given duration from the model. Toggle flips become
/// events; closes that would precede any open on their port are dropped, the
/// way a capture never records them.
pub fn gen_traffic(model: &TrafficModel, duration: f64, seed: u64) -> Result<TrafficTrace> {
    gen_traffic_rng(model, duration, &mut substream(seed, "synth.traffic"))
}

pub fn gen_traffic_rng<R: Rng>(
    model: &TrafficModel,
    duration: f64,
    rng: &mut R,
) -> Result<TrafficTrace> {
    let net = model.to_ctbn();
    let joint = forward_sample_rng(&net, duration, rng)?;
    let mut events = Vec::new();
    for (p, sub) in model.submodels().iter().enumerate() {
        let port = emit_port(model, sub.port());
        for (j, kind) in EventKind::ALL.into_iter().enumerate() {
            // Variable layout per port: hidden chain first, then four toggles.
            let v = 1 + 5 * p + 1 + j;
            for time in flip_times(&joint.marginal(v)?) {
                events.push(TrafficEvent { time, port, kind });
            }
        }
    }
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.port.cmp(&b.port))
            .then(a.kind.index().cmp(&b.kind.index()))
    });
    drop_unmatched_closes(&mut events);
    TrafficTrace::new(events, duration)
}

/// Concrete port carried by generated events: the port itself, or for the
/// catch-all bucket the lowest ephemeral port no listed submodel claims.
fn emit_port(model: &TrafficModel, key: PortKey) -> u16 {
    match key {
        PortKey::Port(p) => p,
        PortKey::Other => {
            let mut candidate = 49152u16;
            while model
                .submodels()
                .iter()
                .any(|s| s.port() == PortKey::Port(candidate))
            {
                candidate += 1;
            }
            candidate
        }
    }
}

fn flip_times(path: &Trajectory) -> Vec<f64> {
    let segs = path.segments();
    let mut clock = path.start();
    let mut out = Vec::with_capacity(segs.len().saturating_sub(1));
    for &(_, dwell) in &segs[..segs.len() - 1] {
        clock += dwell;
        out.push(clock);
    }
    out
}

fn drop_unmatched_closes(events: &mut Vec<TrafficEvent>) {
    let mut open = std::collections::HashMap::new();
    events.retain(|e| {
        let count = open.entry(e.port).or_insert(0i64);
        match e.kind {
            EventKind::ConnOpen => *count += 1,
            EventKind::ConnClose => {
                if *count == 0 {
                    return false;
                }
                *count -= 1;
            }
            _ => {}
        }
        true
    });
}

/// Cut a trace at `at` into a prefix over `[0, at)` and a suffix rebased to
/// start at zero. Connections spanning the cut lose their close (prefix) or
/// their open (suffix) so each half stands alone as a valid trace.
pub fn split_trace(trace: &TrafficTrace, at: f64) -> Result<(TrafficTrace, TrafficTrace)> {
    if !at.is_finite() || !(at > 0.0) || at >= trace.horizon() {
        return Err(Error::InvalidArgument(format!(
            "split point {at} is outside the trace interior (0, {})",
            trace.horizon()
        )));
    }
    let head = trace.events_between(0.0, at, false).to_vec();
    let mut tail: Vec<TrafficEvent> = trace
        .events_between(at, trace.horizon(), true)
        .iter()
        .map(|e| TrafficEvent { time: e.time - at, ..*e })
        .collect();
    drop_unmatched_closes(&mut tail);
    Ok((
        TrafficTrace::new(head, at)?,
        TrafficTrace::new(tail, trace.horizon() - at)?,
    ))
}

/// Time intervals on a trace known to contain injected traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    intervals: Vec<(f64, f64)>,
}

impl GroundTruth {
    /// Half-open [start, end) intervals; they must fit the horizon and must
    /// not overlap.
    pub fn new(mut intervals: Vec<(f64, f64)>, horizon: f64) -> Result<Self> {
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prev_end = 0.0f64;
        for &(s, e) in &intervals {
            if !s.is_finite() || !e.is_finite() || s < 0.0 || e <= s || e > horizon {
                return Err(Error::InvalidArgument(format!(
                    "interval [{s}, {e}) does not fit inside [0, {horizon})"
                )));
            }
            if s < prev_end {
                return Err(Error::InvalidArgument(format!(
                    "interval starting at {s} overlaps the one ending at {prev_end}"
                )));
            }
            prev_end = e;
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self { intervals: Vec::new() }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Does the half-open window [start, end) intersect any interval?
    /// Touching only at endpoints does not count.
    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        self.intervals.iter().any(|&(s, e)| s < end && start < e)
    }
}

/// Shape of the traffic to plant. Offsets are the template's natural pace;
/// injection rescales them.
#[derive(Debug, Clone)]
pub enum AnomalyTemplate {
    /// Connection-open sweep walking `ports` ascending port numbers.
    Scan { first_port: u16, ports: u16, rate: f64, count: usize },
    /// Inbound packet burst on a single port.
    Flood { port: u16, rate: f64, count: usize },
    /// Open/close churn on a single port.
    Probe { port: u16, rate: f64, pairs: usize },
    /// Literal events with times as offsets from the burst start.
    Burst(Vec<TrafficEvent>),
}

impl AnomalyTemplate {
    /// Materialize the template at natural pace, as offsets from zero.
    fn events(&self) -> Result<Vec<TrafficEvent>> {
        let check_rate = |rate: f64| {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "template rate must be positive and finite, got {rate}"
                )));
            }
            Ok(())
        };
        match self {
            AnomalyTemplate::Scan { first_port, ports, rate, count } => {
                check_rate(*rate)?;
                if *ports == 0 || *count == 0 {
                    return Err(Error::InvalidArgument(
                        "a scan needs at least one port and one event".into(),
                    ));
                }
                Ok((0..*count)
                    .map(|i| TrafficEvent {
                        time: i as f64 / rate,
                        port: (u32::from(*first_port) + i as u32 % u32::from(*ports)) as u16,
                        kind: EventKind::ConnOpen,
                    })
                    .collect())
            }
            AnomalyTemplate::Flood { port, rate, count } => {
                check_rate(*rate)?;
                if *count == 0 {
                    return Err(Error::InvalidArgument("a flood needs at least one event".into()));
                }
                Ok((0..*count)
                    .map(|i| TrafficEvent {
                        time: i as f64 / rate,
                        port: *port,
                        kind: EventKind::PktIn,
                    })
                    .collect())
            }
            AnomalyTemplate::Probe { port, rate, pairs } => {
                check_rate(*rate)?;
                if *pairs == 0 {
                    return Err(Error::InvalidArgument("a probe needs at least one pair".into()));
                }
                Ok((0..2 * *pairs)
                    .map(|i| TrafficEvent {
                        time: i as f64 / rate,
                        port: *port,
                        kind: if i % 2 == 0 { EventKind::ConnOpen } else { EventKind::ConnClose },
                    })
                    .collect())
            }
            AnomalyTemplate::Burst(events) => {
                if events.is_empty() {
                    return Err(Error::InvalidArgument("a burst needs at least one event".into()));
                }
                for w in events.windows(2) {
                    if !(w[1].time >= w[0].time) {
                        return Err(Error::InvalidArgument(
                            "burst events must be time-sorted".into(),
                        ));
                    }
                }
                if !events[0].time.is_finite() || events[0].time < 0.0 {
                    return Err(Error::InvalidArgument(
                        "burst offsets must be finite and nonnegative".into(),
                    ));
                }
                Ok(events.clone())
            }
        }
    }
}

/// How, where, and how fast to plant the anomaly.
#[derive(Debug, Clone)]
pub struct InjectionSpec {
    /// Fraction of the trace the injected window occupies.
    pub alpha: f64,
    /// Speed scale of the anomaly; gaps stretch by 1/beta.
    pub beta: f64,
    pub seed: u64,
    pub template: AnomalyTemplate,
}

impl InjectionSpec {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0) || v > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// What actually got planted, for callers that must not swallow truncation.
#[derive(Debug, Clone)]
pub struct InjectionReport {
    /// Events inserted, in time order.
    pub injected: Vec<TrafficEvent>,
    /// Template events the window cap cut off.
    pub dropped: usize,
}

impl InjectionReport {
    /// The cap reduced the anomaly to its first event alone.
    pub fn single_event(&self) -> bool {
        self.injected.len() == 1 && self.dropped > 0
    }
}

/// Plant the spec's template into the trace: the window starts uniformly in
/// the first half and spans alpha times the horizon; template gaps stretch by
/// 1/beta; events past the window are dropped (a one-event remnant is legal
/// but worth a caller-side warning, see [`InjectionReport::single_event`]).
pub fn inject_anomaly(
    trace: &TrafficTrace,
    spec: &InjectionSpec,
) -> Result<(TrafficTrace, GroundTruth, InjectionReport)> {
    spec.validate()?;
    let template = spec.template.events()?;
    let mut rng = substream(spec.seed, "synth.inject");
    let start = rng.gen_range(0.0..trace.horizon() / 2.0);
    plant(trace, start, &template, spec.alpha, spec.beta)
}

/// Lift a window of another host's traffic into this trace, slowed like a
/// worm. The source window is chosen uniformly at random and sized so that
/// after stretching it fills alpha times this trace's horizon; closes with no
/// matching open inside the window are dropped.
pub fn mix_hosts(
    trace_a: &TrafficTrace,
    trace_b: &TrafficTrace,
    spec: &InjectionSpec,
) -> Result<(TrafficTrace, GroundTruth, InjectionReport)> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "synth.mix");
    let span = spec.alpha * trace_a.horizon() * spec.beta;
    let latest = (trace_b.horizon() - span).max(0.0);
    let from = if latest > 0.0 { rng.gen_range(0.0..latest) } else { 0.0 };
    let mut window: Vec<TrafficEvent> = trace_b
        .events_between(from, (from + span).min(trace_b.horizon()), false)
        .iter()
        .map(|e| TrafficEvent { time: e.time - from, ..*e })
        .collect();
    drop_unmatched_closes(&mut window);
    if window.is_empty() {
        return Ok((
            trace_a.clone(),
            GroundTruth::empty(),
            InjectionReport { injected: Vec::new(), dropped: 0 },
        ));
    }
    let start = rng.gen_range(0.0..trace_a.horizon() / 2.0);
    plant(trace_a, start, &window, spec.alpha, spec.beta)
}

fn plant(
    trace: &TrafficTrace,
    start: f64,
    template: &[TrafficEvent],
    alpha: f64,
    beta: f64,
) -> Result<(TrafficTrace, GroundTruth, InjectionReport)> {
    let horizon = trace.horizon();
    let end = (start + alpha * horizon).min(horizon);
    let base = template[0].time;
    let mut injected = Vec::new();
    for e in template {
        let t = start + (e.time - base) / beta;
        if t >= end {
            break;
        }
        injected.push(TrafficEvent { time: t, ..*e });
    }
    let dropped = template.len() - injected.len();

    // Merge two individually valid streams; ties keep host events first.
    let host = trace.events();
    let mut merged = Vec::with_capacity(host.len() + injected.len());
    let (mut i, mut j) = (0, 0);
    while i < host.len() || j < injected.len() {
        let take_host = j >= injected.len()
            || (i < host.len() && host[i].time <= injected[j].time);
        if take_host {
            merged.push(host[i]);
            i += 1;
        } else {
            merged.push(injected[j]);
            j += 1;
        }
    }
    Ok((
        TrafficTrace::new(merged, horizon)?,
        GroundTruth::new(vec![(start, end)], horizon)?,
        InjectionReport { injected, dropped },
    ))
}
