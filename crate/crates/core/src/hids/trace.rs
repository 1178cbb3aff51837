//! System call logs with tick-resolution timestamps.
//!
//! A log records, per process, batches of calls sharing one clock tick: the
//! order within a batch is exact but the time is only known to the tick.
//! Files carry the resolution in a header line so inference can rebuild the
//! spike and gap layout.

use std::collections::HashMap;
use std::fmt;

use crate::{Error, Result};

/// Slack when checking that consecutive ticks are a full resolution unit
/// apart; quantized timestamps re-round by an ulp or two.
const TICK_SLOP: f64 = 1e-9;

pub const RESOLUTION_KEY: &str = "resolution_seconds=";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Attack,
    Unknown,
}

impl Label {
    pub fn parse(text: &str) -> Result<Label> {
        match text {
            "normal" => Ok(Label::Normal),
            "attack" => Ok(Label::Attack),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::InvalidArgument(format!(
                "unknown label {other:?}, expected normal, attack, or unknown"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tick: a timestamp and the calls recorded at it, in issue order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub time: f64,
    pub calls: Vec<String>,
}

/// One process's recorded activity at a fixed clock resolution.
#[derive(Debug, Clone)]
pub struct ProcessTrace {
    id: String,
    ticks: Vec<Tick>,
    resolution: f64,
    pub label: Label,
}

impl ProcessTrace {
    pub fn new(id: String, ticks: Vec<Tick>, resolution: f64) -> Result<Self> {
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(Error::InvalidTrajectory(format!(
                "process id {id:?} must be nonempty without spaces or commas"
            )));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidTrajectory(format!(
                "clock resolution must be positive and finite, got {resolution}"
            )));
        }
        if ticks.is_empty() {
            return Err(Error::InvalidTrajectory(format!("process {id} has no ticks")));
        }
        for (i, tick) in ticks.iter().enumerate() {
            if !tick.time.is_finite() || tick.time < 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "process {id} tick {i} has timestamp {}",
                    tick.time
                )));
            }
            if i > 0 && tick.time - ticks[i - 1].time < resolution - TICK_SLOP {
                return Err(Error::InvalidTrajectory(format!(
                    "process {id} ticks {} and {i} are {} apart, under the resolution {resolution}",
                    i - 1,
                    tick.time - ticks[i - 1].time
                )));
            }
        }
        Ok(Self {
            id,
            ticks,
            resolution,
            label: Label::Unknown,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn ticks(&self) -> &[Tick] {
        &self.ticks
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn n_calls(&self) -> usize {
        self.ticks.iter().map(|t| t.calls.len()).sum()
    }

    /// All calls in issue order, tick boundaries dropped.
    pub fn flat_calls(&self) -> Vec<&str> {
        self.ticks
            .iter()
            .flat_map(|t| t.calls.iter().map(|c| c.as_str()))
            .collect()
    }

    /// Observation window: from the first tick to one resolution unit past
    /// the last (the final batch still takes a tick to happen).
    pub fn window(&self) -> (f64, f64) {
        (
            self.ticks[0].time,
            self.ticks[self.ticks.len() - 1].time + self.resolution,
        )
    }
}

/// Write a batch of process traces as one log file. Processes appear in the
/// given order; all must share the same clock resolution.
pub fn write_syscall_traces(traces: &[ProcessTrace]) -> Result<String> {
    let resolution = match traces.first() {
        Some(t) => t.resolution,
        None => {
            return Err(Error::InvalidArgument(
                "no processes to write; a log needs at least one".into(),
            ))
        }
    };
    if let Some(t) = traces.iter().find(|t| t.resolution != resolution) {
        return Err(Error::InvalidArgument(format!(
            "mixed clock resolutions {} and {} in one log",
            resolution, t.resolution
        )));
    }
    let mut out = format!("{RESOLUTION_KEY}{resolution:?}\n");
    for trace in traces {
        for tick in &trace.ticks {
            for (k, call) in tick.calls.iter().enumerate() {
                out.push_str(&format!("{},{:?},{k},{call}\n", trace.id, tick.time));
            }
            if tick.calls.is_empty() {
                // An eventless tick still pins the window; record it with an
                // empty call field so the round trip keeps it.
                out.push_str(&format!("{},{:?},0,\n", trace.id, tick.time));
            }
        }
    }
    Ok(out)
}

/// Parse a log file; processes come back in order of first appearance, with
/// ticks ordered by time and calls by their sequence index.
pub fn parse_syscall_traces(text: &str, origin: &str) -> Result<Vec<ProcessTrace>> {
    let fail = |line: usize, message: String| Error::Parse {
        file: origin.to_string(),
        line,
        message,
    };
    let mut resolution: Option<f64> = None;
    // Per process: tick time -> (seq, call) list, plus first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut procs: HashMap<String, Vec<(f64, Vec<(usize, String)>)>> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if resolution.is_none() {
            let value = trimmed.strip_prefix(RESOLUTION_KEY).ok_or_else(|| {
                fail(line, format!("expected a {RESOLUTION_KEY}<seconds> header"))
            })?;
            let dt: f64 = value
                .parse()
                .map_err(|_| fail(line, format!("bad resolution {value:?}")))?;
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(fail(line, format!("resolution must be positive, got {dt}")));
            }
            resolution = Some(dt);
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(fail(
                line,
                format!("expected process,timestamp,seq,call, got {} fields", fields.len()),
            ));
        }
        let id = fields[0].to_string();
        let time: f64 = fields[1]
            .parse()
            .map_err(|_| fail(line, format!("bad timestamp {:?}", fields[1])))?;
        let seq: usize = fields[2]
            .parse()
            .map_err(|_| fail(line, format!("bad sequence index {:?}", fields[2])))?;
        let call = fields[3].to_string();
        if !procs.contains_key(&id) {
            order.push(id.clone());
        }
        let ticks = procs.entry(id).or_default();
        match ticks.iter_mut().find(|(t, _)| *t == time) {
            Some((_, calls)) => calls.push((seq, call)),
            None => ticks.push((time, vec![(seq, call)])),
        }
    }
    let resolution = resolution
        .ok_or_else(|| fail(text.lines().count().max(1), "no resolution header".into()))?;
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut ticks = procs.remove(&id).unwrap();
        ticks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut built = Vec::with_capacity(ticks.len());
        for (time, mut calls) in ticks {
            calls.sort_by_key(|&(seq, _)| seq);
            for pair in calls.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::InvalidTrajectory(format!(
                        "process {id} repeats sequence index {} at time {time}",
                        pair[0].0
                    )));
                }
            }
            let calls: Vec<String> = calls
                .into_iter()
                .map(|(_, c)| c)
                .filter(|c| !c.is_empty())
                .collect();
            built.push(Tick { time, calls });
        }
        out.push(ProcessTrace::new(id, built, resolution)?);
    }
    Ok(out)
}

/// Write the label sidecar: one `process_id,label` line per process.
pub fn write_labels(traces: &[ProcessTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&format!("{},{}\n", t.id, t.label));
    }
    out
}

/// Parse a label sidecar and return (process id, label) pairs.
pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<(String, Label)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (id, label) = trimmed.split_once(',').ok_or_else(|| Error::Parse {
            file: origin.to_string(),
            line: idx + 1,
            message: format!("expected process_id,label, got {trimmed:?}"),
        })?;
        out.push((id.to_string(), Label::parse(label).map_err(|e| Error::Parse {
            file: origin.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?));
    }
    Ok(out)
}

/// Stamp labels from a sidecar onto traces; ids absent from the sidecar stay
/// unknown, ids without a matching trace are ignored.
pub fn apply_labels(traces: &mut [ProcessTrace], labels: &[(String, Label)]) {
    let by_id: HashMap<&str, Label> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    for t in traces {
        if let Some(&label) = by_id.get(t.id.as_str()) {
            t.label = label;
        }
    }
}
