//! Network traffic anomaly detection.
//!
//! A hidden global state modulates per-port hidden chains, and each port
//! emits packet and connection events at rates picked by its chain's state.
//! Training marginalizes the global state with a particle filter and handles
//! everything below it in closed form; scoring assigns each time window the
//! log-likelihood of its events given the traffic seen before it.

mod estep;
mod exact;
mod model;
mod rbpf;
mod score;
mod trace;

pub use estep::{submodel_estep, NidsEss, SubmodelEstep, SubmodelStats};
pub use exact::exact_estep;
pub use model::{
    build_traffic_model, select_ports, toggle_active_pair, PortKey, PortSubmodel, ToggleVariable,
    TrafficModel,
};
pub use rbpf::{nids_mstep, rbpf_em, rbpf_estep, NidsEmConfig, NidsEmOutcome, RbpfConfig};
pub use score::{connection_count_baseline, score_windows, WindowScore};
pub use trace::{EventKind, TrafficEvent, TrafficTrace};
