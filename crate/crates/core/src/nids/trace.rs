//! Network event traces.
//!
//! A trace is a time-ordered list of instantaneous events, each tagged with a
//! port and one of four kinds. Connection opens and closes are events, not
//! state: the trace only promises that closes never outnumber opens on any
//! port prefix.

use std::collections::HashMap;
use std::fmt;

use crate::{Error, Result};

/// The four observable event kinds on a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PktIn,
    PktOut,
    ConnOpen,
    ConnClose,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [
        EventKind::PktIn,
        EventKind::PktOut,
        EventKind::ConnOpen,
        EventKind::ConnClose,
    ];

    /// Position in [`EventKind::ALL`]; also the toggle slot in a port model.
    pub fn index(self) -> usize {
        match self {
            EventKind::PktIn => 0,
            EventKind::PktOut => 1,
            EventKind::ConnOpen => 2,
            EventKind::ConnClose => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::PktIn => "PKT_IN",
            EventKind::PktOut => "PKT_OUT",
            EventKind::ConnOpen => "CONN_OPEN",
            EventKind::ConnClose => "CONN_CLOSE",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficEvent {
    pub time: f64,
    pub port: u16,
    pub kind: EventKind,
}

/// A validated event trace over the window [0, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    events: Vec<TrafficEvent>,
    horizon: f64,
}

/// Required first data line of a trace file.
pub const TRACE_HEADER: &str = "timestamp_seconds,port,kind";
/// Comment key carrying the observation horizon through files.
const HORIZON_KEY: &str = "# horizon_seconds=";

impl TrafficTrace {
    pub fn new(events: Vec<TrafficEvent>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidTrajectory(format!(
                "trace horizon must be positive and finite, got {horizon}"
            )));
        }
        let mut open: HashMap<u16, i64> = HashMap::new();
        let mut prev = 0.0f64;
        for (i, e) in events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "event {i} has timestamp {}, expected a finite value >= 0",
                    e.time
                )));
            }
            if e.time < prev {
                return Err(Error::InvalidTrajectory(format!(
                    "event {i} at t = {} precedes the event before it at t = {prev}",
                    e.time
                )));
            }
            if e.time > horizon {
                return Err(Error::InvalidTrajectory(format!(
                    "event {i} at t = {} lies beyond the horizon {horizon}",
                    e.time
                )));
            }
            let c = open.entry(e.port).or_insert(0);
            match e.kind {
                EventKind::ConnOpen => *c += 1,
                EventKind::ConnClose => {
                    *c -= 1;
                    if *c < 0 {
                        return Err(Error::InvalidTrajectory(format!(
                            "event {i}: CONN_CLOSE on port {} without a matching CONN_OPEN",
                            e.port
                        )));
                    }
                }
                _ => {}
            }
            prev = e.time;
        }
        Ok(Self { events, horizon })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), horizon)
    }

    pub fn events(&self) -> &[TrafficEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with t in [t0, t1), or [t0, t1] when `closed_end` is set (used
    /// by the final window of a partition so the last event is never lost).
    pub fn events_between(&self, t0: f64, t1: f64, closed_end: bool) -> &[TrafficEvent] {
        let a = self.events.partition_point(|e| e.time < t0);
        let b = if closed_end {
            self.events.partition_point(|e| e.time <= t1)
        } else {
            self.events.partition_point(|e| e.time < t1)
        };
        &self.events[a..b]
    }

    /// Render as the canonical trace file: a horizon comment, the header
    /// line, then one `timestamp,port,kind` line per event.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(HORIZON_KEY);
        out.push_str(&format!("{:?}\n", self.horizon));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&format!("{:?},{},{}\n", e.time, e.port, e.kind.name()));
        }
        out
    }

    /// Parse a trace file. Comment lines start with `#` and may appear
    /// anywhere; a `# horizon_seconds=` comment fixes the horizon, otherwise
    /// the last event's timestamp is used. `origin` names the file in errors.
    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Parse {
            file: origin.to_string(),
            line,
            message,
        };
        let mut events = Vec::new();
        let mut horizon: Option<f64> = None;
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix(HORIZON_KEY) {
                let h: f64 = rest
                    .trim()
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad horizon value {rest:?}")))?;
                horizon = Some(h);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != TRACE_HEADER {
                    return Err(fail(
                        lineno,
                        format!("expected header {TRACE_HEADER:?}, found {line:?}"),
                    ));
                }
                saw_header = true;
                continue;
            }
            let mut parts = line.split(',');
            let (t, p, k) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(p), Some(k), None) => (t, p, k),
                _ => return Err(fail(lineno, "expected timestamp,port,kind".into())),
            };
            let time: f64 = t
                .parse()
                .map_err(|_| fail(lineno, format!("bad timestamp {t:?}")))?;
            let port: u16 = p
                .parse()
                .map_err(|_| fail(lineno, format!("bad port {p:?}")))?;
            let kind = EventKind::parse(k)
                .ok_or_else(|| fail(lineno, format!("unknown event kind {k:?}")))?;
            events.push(TrafficEvent { time, port, kind });
        }
        if !saw_header {
            return Err(fail(text.lines().count().max(1), "missing header line".into()));
        }
        let horizon = horizon.unwrap_or_else(|| events.last().map_or(1.0, |e| e.time.max(1e-9)));
        Self::new(events, horizon).map_err(|e| match e {
            Error::InvalidTrajectory(msg) => fail(0, msg),
            other => other,
        })
    }
}
