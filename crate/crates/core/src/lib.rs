//! Cross-trace aggregation for single-request performance diagnosis.
//!
//! Traces are ingested into an [`store::Store`] that incrementally maintains
//! latency distributions per task type, event and invocation frequencies, and
//! a per-process activity index. A single trace can then be loaded together
//! with those aggregates ([`store::Snapshot::load_trace_aggregates`]).

pub mod model;
pub mod aggregation;
pub mod store;
pub mod bench;
pub mod report;
