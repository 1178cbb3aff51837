//! Synthetic data generation: traffic and system-call traces sampled from
//! known models, plus anomaly planting with ground truth for grading.

mod syscalls;
mod traffic;

pub use syscalls::gen_syscalls;
pub use traffic::{
    gen_traffic, gen_traffic_rng, inject_anomaly, mix_hosts, split_trace, AnomalyTemplate,
    GroundTruth, InjectionReport, InjectionSpec,
};
