//! Metric, temporal and structural aggregation.
//!
//! Everything here is a pure function of a trace and/or a read-only view of
//! aggregate state ([`AggregateState`], [`ActivityIndex`]). The store provides
//! those views through its snapshots.

mod contention;
mod features;
mod histogram;
mod structural;

use crate::model::Micros;
use std::sync::Arc;
use thiserror::Error;

pub use contention::{
    bucket_range, contention_timeline, contention_timelines, ContentionTimeline, BUCKET_US,
};
pub use features::{extract_features, ActivityRecord, FeatureSet};
pub use histogram::{build_histogram, latency_position, Histogram, LatencyPosition};
pub use structural::{edge_frequency, event_rarity, EdgeFrequency, EventRarity};

pub const DEFAULT_BINS: usize = 30;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_RARITY_CUTOFF: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("NO_SAMPLES: histogram needs at least one sample")]
    NoSamples,
    #[error("INVALID_BINS: bin count must be at least 1, got {0}")]
    InvalidBins(usize),
    #[error("INVALID_THRESHOLD: threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("UNKNOWN_TYPE: no ingested instances of task type {0:?}")]
    UnknownType(String),
    #[error("UNKNOWN_LABEL: label {label:?} never seen in task type {task_type:?}")]
    UnknownLabel { task_type: String, label: String },
    #[error("UNKNOWN_EDGE: {parent:?} never invoked {child:?}")]
    UnknownEdge { parent: String, child: String },
    #[error("UNKNOWN_PROCESS: process {0:?} has no recorded activity")]
    UnknownProcess(String),
    #[error("UNKNOWN_TASK: task {0:?} is not part of the trace")]
    UnknownTask(String),
}

impl AggregationError {
    pub fn code(&self) -> &'static str {
        match self {
            AggregationError::NoSamples => "NO_SAMPLES",
            AggregationError::InvalidBins(_) => "INVALID_BINS",
            AggregationError::InvalidThreshold(_) => "INVALID_THRESHOLD",
            AggregationError::UnknownType(_) => "UNKNOWN_TYPE",
            AggregationError::UnknownLabel { .. } => "UNKNOWN_LABEL",
            AggregationError::UnknownEdge { .. } => "UNKNOWN_EDGE",
            AggregationError::UnknownProcess(_) => "UNKNOWN_PROCESS",
            AggregationError::UnknownTask(_) => "UNKNOWN_TASK",
        }
    }
}

/// Occurrence rows for one `(type, label)` or `(parent type, child type)` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PresenceCounts {
    /// Total rows, counting repeats within one task instance.
    pub occurrences: u64,
    /// Distinct task instances with at least one row.
    pub instances: u64,
}

/// Read access to cross-trace aggregate tables.
pub trait AggregateState {
    fn type_instance_count(&self, task_type: &str) -> Option<u64>;
    fn latency_samples(&self, task_type: &str) -> Option<Vec<Micros>>;
    fn event_counts(&self, task_type: &str, label: &str) -> Option<PresenceCounts>;
    fn invocation_counts(&self, parent_type: &str, child_type: &str) -> Option<PresenceCounts>;
}

/// One task's busy interval on a process, tagged with its request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityInterval {
    pub start_us: Micros,
    pub end_us: Micros,
    pub trace_id: Arc<str>,
}

pub trait ActivityIndex {
    /// Intervals on `process_id` with `start_us <= end && end_us >= start`.
    /// `None` when the process has never been seen.
    fn overlapping(&self, process_id: &str, start: Micros, end: Micros)
        -> Option<Vec<ActivityInterval>>;
}

pub(crate) fn check_threshold(threshold: f64) -> Result<(), AggregationError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(AggregationError::InvalidThreshold(threshold))
    }
}
