//! One module per pipeline family; each command is a thin orchestration of
//! library calls plus run bookkeeping.

pub mod baseline;
pub mod eval;
pub mod gen;
pub mod hids;
pub mod model;
pub mod nids;
