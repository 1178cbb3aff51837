//! The hierarchical traffic model.
//!
//! One slow global variable G modulates a hidden activity variable H per
//! port; each H drives four observable toggles, one per event kind. A toggle
//! fires at a single tied rate while H sits in one of its two active states
//! and not at all otherwise, so the event stream is a marked point process
//! whose intensity is a function of the hidden pair (G, H).

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::trace::{EventKind, TrafficTrace};
use crate::ctbn::{Cim, CtbnModel};
use crate::ctmc::IntensityMatrix;
use crate::rng::{log_uniform, substream, substream_indexed};
use crate::{Error, Result};

/// A concrete port number, or the shared bucket for everything unlisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortKey {
    Port(u16),
    Other,
}

impl PortKey {
    pub fn parse(s: &str) -> Option<PortKey> {
        if s == "other" {
            Some(PortKey::Other)
        } else {
            s.parse().ok().map(PortKey::Port)
        }
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortKey::Port(p) => write!(f, "{p}"),
            PortKey::Other => f.write_str("other"),
        }
    }
}

/// The two hidden states toggle slot `j` listens to. Consecutive pairs walk
/// the state space and wrap, so four slots cover an 8-state H disjointly and
/// smaller spaces share states.
pub fn toggle_active_pair(j: usize, n_h: usize) -> [usize; 2] {
    [(2 * j) % n_h, (2 * j + 1) % n_h]
}

/// An observable event stream bound to two states of its hidden parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ToggleVariable {
    kind: EventKind,
    active: [usize; 2],
    rate: f64,
}

impl ToggleVariable {
    pub fn new(kind: EventKind, active: [usize; 2], rate: f64, n_h: usize) -> Result<Self> {
        if active[0] == active[1] || active[0] >= n_h || active[1] >= n_h {
            return Err(Error::InvalidModel(format!(
                "toggle {} needs two distinct active states below {n_h}, got {active:?}",
                kind.name()
            )));
        }
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::InvalidModel(format!(
                "toggle {} has rate {rate}, expected a finite value >= 0",
                kind.name()
            )));
        }
        Ok(Self { kind, active, rate })
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn active(&self) -> [usize; 2] {
        self.active
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_active(&self, h: usize) -> bool {
        h == self.active[0] || h == self.active[1]
    }

    /// Event rate as a function of the hidden state.
    pub fn weights(&self, n_h: usize) -> DVector<f64> {
        DVector::from_fn(n_h, |h, _| if self.is_active(h) { self.rate } else { 0.0 })
    }
}

/// One port's slice of the model: a hidden H chain whose dynamics switch
/// with G, plus one toggle per event kind parented on H.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSubmodel {
    port: PortKey,
    h_cims: Vec<IntensityMatrix>,
    toggles: Vec<ToggleVariable>,
}

impl PortSubmodel {
    pub fn new(
        port: PortKey,
        h_cims: Vec<IntensityMatrix>,
        toggles: Vec<ToggleVariable>,
    ) -> Result<Self> {
        if h_cims.is_empty() {
            return Err(Error::InvalidModel(format!(
                "port {port} has no hidden-chain matrices"
            )));
        }
        let n_h = h_cims[0].n();
        if n_h < 2 {
            return Err(Error::InvalidModel(format!(
                "port {port} has a {n_h}-state hidden chain, need at least 2"
            )));
        }
        if h_cims.iter().any(|q| q.n() != n_h) {
            return Err(Error::InvalidModel(format!(
                "port {port} mixes hidden-chain sizes"
            )));
        }
        if toggles.len() != EventKind::ALL.len() {
            return Err(Error::InvalidModel(format!(
                "port {port} has {} toggles, expected {}",
                toggles.len(),
                EventKind::ALL.len()
            )));
        }
        for (j, tog) in toggles.iter().enumerate() {
            if tog.kind() != EventKind::ALL[j] {
                return Err(Error::InvalidModel(format!(
                    "port {port} toggle {j} is {}, expected {}",
                    tog.kind().name(),
                    EventKind::ALL[j].name()
                )));
            }
            if tog.active[0] >= n_h || tog.active[1] >= n_h {
                return Err(Error::InvalidModel(format!(
                    "port {port} toggle {} listens to states {:?} outside 0..{n_h}",
                    tog.kind().name(),
                    tog.active
                )));
            }
        }
        Ok(Self {
            port,
            h_cims,
            toggles,
        })
    }

    pub fn port(&self) -> PortKey {
        self.port
    }

    pub fn n_h(&self) -> usize {
        self.h_cims[0].n()
    }

    /// Hidden-chain intensity matrix while the global variable sits in `g`.
    pub fn h_cim(&self, g: usize) -> &IntensityMatrix {
        &self.h_cims[g]
    }

    pub fn h_cims(&self) -> &[IntensityMatrix] {
        &self.h_cims
    }

    pub fn toggles(&self) -> &[ToggleVariable] {
        &self.toggles
    }

    pub fn toggle(&self, kind: EventKind) -> &ToggleVariable {
        &self.toggles[kind.index()]
    }
}

/// The full model: the global chain plus one submodel per listed port.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    g: IntensityMatrix,
    submodels: Vec<PortSubmodel>,
}

impl TrafficModel {
    pub fn new(g: IntensityMatrix, submodels: Vec<PortSubmodel>) -> Result<Self> {
        if submodels.is_empty() {
            return Err(Error::InvalidModel("traffic model has no ports".into()));
        }
        let n_h = submodels[0].n_h();
        let mut seen = HashSet::new();
        for sub in &submodels {
            if sub.h_cims.len() != g.n() {
                return Err(Error::InvalidModel(format!(
                    "port {} has {} hidden-chain matrices for a {}-state global chain",
                    sub.port,
                    sub.h_cims.len(),
                    g.n()
                )));
            }
            if sub.n_h() != n_h {
                return Err(Error::InvalidModel(format!(
                    "port {} has a {}-state hidden chain, others have {n_h}",
                    sub.port,
                    sub.n_h()
                )));
            }
            if !seen.insert(sub.port) {
                return Err(Error::InvalidModel(format!(
                    "port {} appears twice",
                    sub.port
                )));
            }
        }
        Ok(Self { g, submodels })
    }

    pub fn n_g(&self) -> usize {
        self.g.n()
    }

    pub fn n_h(&self) -> usize {
        self.submodels[0].n_h()
    }

    pub fn g(&self) -> &IntensityMatrix {
        &self.g
    }

    pub fn submodels(&self) -> &[PortSubmodel] {
        &self.submodels
    }

    /// Count of process variables: the global chain, then a hidden chain and
    /// four toggles per port.
    pub fn n_variables(&self) -> usize {
        1 + 5 * self.submodels.len()
    }

    pub fn port_index(&self, port: PortKey) -> Option<usize> {
        self.submodels.iter().position(|s| s.port == port)
    }

    /// Submodel responsible for a concrete port number: an exact match, or
    /// the shared bucket when one is present.
    pub fn route(&self, port: u16) -> Option<usize> {
        self.port_index(PortKey::Port(port))
            .or_else(|| self.port_index(PortKey::Other))
    }

    /// Split a trace into per-submodel event streams, preserving time order.
    /// Events on ports with no submodel and no shared bucket are dropped;
    /// the count of dropped events is returned alongside.
    pub fn split_events(&self, trace: &TrafficTrace) -> (Vec<Vec<(f64, EventKind)>>, usize) {
        let mut out = vec![Vec::new(); self.submodels.len()];
        let mut dropped = 0;
        for e in trace.events() {
            match self.route(e.port) {
                Some(i) => out[i].push((e.time, e.kind)),
                None => dropped += 1,
            }
        }
        (out, dropped)
    }

    /// Express the model as a structured chain network: variable `G`, then
    /// per port a hidden variable `H:<port>` conditioned on G and one
    /// two-state variable `P:<port>:<kind>` per toggle conditioned on H,
    /// flipping symmetrically at the toggle rate in active states.
    pub fn to_ctbn(&self) -> CtbnModel {
        let n_g = self.n_g();
        let mut names = vec!["G".to_string()];
        let mut sizes = vec![n_g];
        let mut cims = vec![Cim::root(0, self.g.clone())];
        for sub in &self.submodels {
            let n_h = sub.n_h();
            let h_idx = names.len();
            names.push(format!("H:{}", sub.port));
            sizes.push(n_h);
            cims.push(Cim::new(h_idx, vec![0], sub.h_cims.clone()));
            for tog in &sub.toggles {
                let t_idx = names.len();
                names.push(format!("P:{}:{}", sub.port, tog.kind().name()));
                sizes.push(2);
                let mats = (0..n_h)
                    .map(|h| {
                        let r = if tog.is_active(h) { tog.rate() } else { 0.0 };
                        IntensityMatrix::from_rates(DMatrix::from_row_slice(
                            2,
                            2,
                            &[0.0, r, r, 0.0],
                        ))
                        .expect("symmetric 2-state rates are a valid matrix")
                    })
                    .collect();
                cims.push(Cim::new(t_idx, vec![h_idx], mats));
            }
        }
        CtbnModel::new(names, sizes, cims, None).expect("construction follows the schema")
    }

    /// Rebuild a traffic model from a chain network written by [`to_ctbn`].
    /// The variable names carry the structure; toggles must be symmetric
    /// two-state variables with exactly two equal-rate active parent states.
    pub fn from_ctbn(model: &CtbnModel) -> Result<TrafficModel> {
        let bad = |msg: String| Error::InvalidModel(msg);
        let g_idx = model
            .index_of("G")
            .ok_or_else(|| bad("no variable named G".into()))?;
        if !model.parents(g_idx).is_empty() {
            return Err(bad("G must have no parents".into()));
        }
        let g = model.cim(g_idx).matrices()[0].clone();

        // Submodels in the order their hidden variables appear.
        let mut subs = Vec::new();
        for (idx, name) in model.names().iter().enumerate() {
            let Some(port_str) = name.strip_prefix("H:") else {
                continue;
            };
            let port = PortKey::parse(port_str)
                .ok_or_else(|| bad(format!("bad port in variable name {name:?}")))?;
            if model.parents(idx) != [g_idx] {
                return Err(bad(format!("{name} must have exactly the parent G")));
            }
            let h_cims = model.cim(idx).matrices().to_vec();
            let n_h = model.size(idx);
            let toggles = EventKind::ALL
                .iter()
                .map(|&kind| {
                    let tname = format!("P:{port_str}:{}", kind.name());
                    let t_idx = model
                        .index_of(&tname)
                        .ok_or_else(|| bad(format!("missing variable {tname}")))?;
                    if model.size(t_idx) != 2 {
                        return Err(bad(format!("{tname} must have 2 states")));
                    }
                    if model.parents(t_idx) != [idx] {
                        return Err(bad(format!("{tname} must have exactly the parent {name}")));
                    }
                    let mut active = Vec::new();
                    let mut rate = None;
                    for (h, mat) in model.cim(t_idx).matrices().iter().enumerate() {
                        let up = mat.rate(0, 1);
                        let down = mat.rate(1, 0);
                        if up != down {
                            return Err(bad(format!(
                                "{tname} flips asymmetrically under parent state {h}"
                            )));
                        }
                        if up > 0.0 {
                            active.push(h);
                            match rate {
                                None => rate = Some(up),
                                Some(r) if r == up => {}
                                Some(r) => {
                                    return Err(bad(format!(
                                        "{tname} has untied active rates {r} and {up}"
                                    )))
                                }
                            }
                        }
                    }
                    if active.len() != 2 {
                        return Err(bad(format!(
                            "{tname} must be active in exactly 2 parent states, found {}",
                            active.len()
                        )));
                    }
                    ToggleVariable::new(kind, [active[0], active[1]], rate.unwrap(), n_h)
                })
                .collect::<Result<Vec<_>>>()?;
            subs.push(PortSubmodel::new(port, h_cims, toggles)?);
        }
        let expected = 1 + 5 * subs.len();
        if model.n_variables() != expected {
            return Err(bad(format!(
                "{} variables do not form G plus port blocks ({expected} expected)",
                model.n_variables()
            )));
        }
        TrafficModel::new(g, subs)
    }

    pub fn to_text(&self) -> String {
        crate::ctbn::write_model(&self.to_ctbn())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<TrafficModel> {
        TrafficModel::from_ctbn(&crate::ctbn::parse_model(text, origin)?)
    }
}

/// Initialization rate ranges, chosen so the global chain moves on the scale
/// of tens of seconds, hidden activity on seconds, and events at most a few
/// per second.
const G_RATES: (f64, f64) = (0.01, 0.1);
const H_RATES: (f64, f64) = (0.05, 1.0);
const TOGGLE_RATES: (f64, f64) = (0.05, 2.0);

/// Build a randomized model over the given ports. `n_h` must be even and at
/// least 2; toggle slot j listens to hidden states {2j, 2j+1} taken modulo
/// `n_h`, so an 8-state chain gives each toggle its own pair.
pub fn build_traffic_model(
    ports: &[PortKey],
    n_g: usize,
    n_h: usize,
    seed: u64,
) -> Result<TrafficModel> {
    if ports.is_empty() {
        return Err(Error::InvalidArgument("no ports given".into()));
    }
    if n_g < 1 {
        return Err(Error::InvalidArgument(format!(
            "global chain needs at least 1 state, got {n_g}"
        )));
    }
    if n_h < 2 || n_h % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "hidden chains need an even state count of at least 2, got {n_h}"
        )));
    }
    let mut g_rng = substream(seed, "nids.build.g");
    let g = IntensityMatrix::random_log_uniform(n_g, G_RATES.0, G_RATES.1, &mut g_rng)?;
    let mut subs = Vec::with_capacity(ports.len());
    for (i, &port) in ports.iter().enumerate() {
        let mut h_rng = substream_indexed(seed, "nids.build.h", i as u64);
        let h_cims = (0..n_g)
            .map(|_| IntensityMatrix::random_log_uniform(n_h, H_RATES.0, H_RATES.1, &mut h_rng))
            .collect::<Result<Vec<_>>>()?;
        let mut t_rng = substream_indexed(seed, "nids.build.toggle", i as u64);
        let toggles = EventKind::ALL
            .iter()
            .enumerate()
            .map(|(j, &kind)| {
                let rate = log_uniform(&mut t_rng, TOGGLE_RATES.0, TOGGLE_RATES.1);
                ToggleVariable::new(kind, toggle_active_pair(j, n_h), rate, n_h)
            })
            .collect::<Result<Vec<_>>>()?;
        subs.push(PortSubmodel::new(port, h_cims, toggles)?);
    }
    TrafficModel::new(g, subs)
}

/// The `k` busiest concrete ports of a trace, by event count and then by
/// port number, optionally followed by the shared bucket for the rest.
pub fn select_ports(trace: &TrafficTrace, k: usize, include_other: bool) -> Vec<PortKey> {
    let mut counts: HashMap<u16, usize> = HashMap::new();
    for e in trace.events() {
        *counts.entry(e.port).or_insert(0) += 1;
    }
    let mut by_freq: Vec<(u16, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut ports: Vec<PortKey> = by_freq
        .into_iter()
        .take(k)
        .map(|(p, _)| PortKey::Port(p))
        .collect();
    if include_other {
        ports.push(PortKey::Other);
    }
    ports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_ports_make_forty_six_variables() {
        let ports: Vec<PortKey> = (1..=9).map(PortKey::Port).collect();
        let model = build_traffic_model(&ports, 4, 8, 7).unwrap();
        assert_eq!(model.n_variables(), 46);
        assert_eq!(model.to_ctbn().n_variables(), 46);
    }

    #[test]
    fn one_port_makes_six_variables() {
        let model = build_traffic_model(&[PortKey::Port(80)], 4, 8, 7).unwrap();
        assert_eq!(model.n_variables(), 6);
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let ports = [PortKey::Port(80), PortKey::Other];
        let a = build_traffic_model(&ports, 4, 8, 123).unwrap();
        let b = build_traffic_model(&ports, 4, 8, 123).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = build_traffic_model(&ports, 4, 8, 124).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn toggle_pairs_walk_the_state_space() {
        assert_eq!(toggle_active_pair(0, 8), [0, 1]);
        assert_eq!(toggle_active_pair(3, 8), [6, 7]);
        assert_eq!(toggle_active_pair(1, 4), [2, 3]);
        assert_eq!(toggle_active_pair(2, 4), [0, 1]);
        // A two-state chain shares the pair across all slots.
        assert_eq!(toggle_active_pair(3, 2), [0, 1]);
    }

    #[test]
    fn sizes_are_validated() {
        let p = [PortKey::Port(1)];
        assert!(build_traffic_model(&p, 0, 8, 0).is_err());
        assert!(build_traffic_model(&p, 4, 7, 0).is_err());
        assert!(build_traffic_model(&p, 4, 0, 0).is_err());
        assert!(build_traffic_model(&[], 4, 8, 0).is_err());
        assert!(build_traffic_model(&p, 1, 2, 0).is_ok());
    }

    #[test]
    fn ctbn_round_trip_is_lossless() {
        let ports = [PortKey::Port(80), PortKey::Port(22), PortKey::Other];
        let model = build_traffic_model(&ports, 3, 4, 55).unwrap();
        let text = model.to_text();
        let back = TrafficModel::from_text(&text, "model.ctbn").unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.port_index(PortKey::Other), Some(2));
        assert_eq!(back.n_g(), 3);
        assert_eq!(back.n_h(), 4);
    }

    #[test]
    fn routing_prefers_exact_ports_and_falls_back_to_the_bucket() {
        let model =
            build_traffic_model(&[PortKey::Port(80), PortKey::Other], 2, 2, 1).unwrap();
        assert_eq!(model.route(80), Some(0));
        assert_eq!(model.route(22), Some(1));
        let no_bucket = build_traffic_model(&[PortKey::Port(80)], 2, 2, 1).unwrap();
        assert_eq!(no_bucket.route(22), None);
    }

    #[test]
    fn busiest_ports_come_first() {
        use super::super::trace::{EventKind, TrafficEvent};
        let mut events = Vec::new();
        for (port, n) in [(22u16, 5usize), (80, 9), (443, 9), (8080, 1)] {
            for i in 0..n {
                events.push(TrafficEvent {
                    time: i as f64 * 0.01 + port as f64 * 1e-6,
                    port,
                    kind: EventKind::PktIn,
                });
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let trace = TrafficTrace::new(events, 10.0).unwrap();
        assert_eq!(
            select_ports(&trace, 2, true),
            vec![PortKey::Port(80), PortKey::Port(443), PortKey::Other]
        );
        assert_eq!(
            select_ports(&trace, 10, false),
            vec![
                PortKey::Port(80),
                PortKey::Port(443),
                PortKey::Port(22),
                PortKey::Port(8080)
            ]
        );
    }
}
