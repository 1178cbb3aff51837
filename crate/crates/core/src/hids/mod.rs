//! Host-side anomaly detection over system-call streams.
//!
//! A hidden process phase modulates per-call firing rates; calls arrive in
//! timestamped batches at a fixed clock resolution. This module covers the
//! model and its text round trip, trace files with label sidecars, exact
//! likelihood and smoothing through auxiliary batch chains, EM, and a
//! sequence-database comparator.

mod infer;
mod model;
mod spike;
mod stide;
mod trace;

pub use infer::{
    hids_em, hids_estep, hids_mstep, process_loglik, HidsEmConfig, HidsEmOutcome, HidsEss,
};
pub use model::{build_syscall_model, default_vocabulary, SyscallModel, OTHER_CALL};
pub use spike::{build_spike_generator, quiet_forward, spike_forward, SpikeGenerator};
pub use stide::{stide_score, stide_train, StideDb};
pub use trace::{
    apply_labels, parse_labels, parse_syscall_traces, write_labels, write_syscall_traces, Label,
    ProcessTrace, Tick, RESOLUTION_KEY,
};
