//! Indexed storage of raw traces and incrementally maintained aggregates.
//!
//! Writers are serialized; every ingest builds the next table state from the
//! current one and publishes it in a single pointer swap. Readers take a
//! [`Snapshot`] (one `Arc` clone) and never observe a partially applied trace.

mod columns;
mod payload;
mod persist;
mod tables;

use crate::aggregation::{
    build_histogram, extract_features, ActivityIndex, ActivityInterval, AggregateState,
    AggregationError, Histogram, PresenceCounts,
};
use crate::model::{parse_trace, validate_dag, Micros, ParseError, Trace, ValidationReport};
use serde::{Deserialize, Serialize};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;
use thiserror::Error;

pub use payload::{
    AggregateParams, FlaggedEdge, FlaggedRarity, TimingBreakdown, TraceAggregatesPayload, MAX_BINS,
};
pub use persist::{LogRecovery, CHECKPOINT_FILE, LOG_FILE};
pub use tables::{CanonicalRows, CanonicalTables, CanonicalType, Tables, TraceSummary};

pub const MAX_PAGE: usize = 1000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("trace {0:?} not found")]
    NotFound(String),
    #[error("trace {0:?} is already stored")]
    Duplicate(String),
    #[error("trace failed validation: {:?}", .0.error_codes())]
    Invalid(ValidationReport),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("storage I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("inconsistent store state: {0}")]
    Inconsistent(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "NOT_FOUND",
            StoreError::Duplicate(_) => "DUPLICATE_TRACE",
            StoreError::Invalid(report) => report
                .errors
                .first()
                .map_or("VALIDATION_FAILED", |i| i.code.as_str()),
            StoreError::Parse(_) => "PARSE_ERROR",
            StoreError::InvalidParam(_) => "INVALID_PARAM",
            StoreError::Aggregation(e) => e.code(),
            StoreError::Io(_) => "IO_ERROR",
            StoreError::Corrupt(_) => "CORRUPT_STORE",
            StoreError::Inconsistent(_) => "INTERNAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOrder {
    /// Oldest first.
    #[default]
    StartTs,
    /// Longest first.
    Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IngestReceipt {
    pub trace_id: String,
    /// Feature extraction plus table update, excluding validation and disk I/O.
    pub preprocessing_us: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub traces: u64,
    pub tasks: u64,
    pub events: u64,
    pub task_types: u64,
    pub processes: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// Write a table checkpoint after this many ingests (0 = only on flush).
    pub checkpoint_every: usize,
    /// `fsync` every log append, not only on flush.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            checkpoint_every: 5_000,
            fsync: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub log: LogRecovery,
    pub checkpoint_used: bool,
}

struct Writer {
    log: Option<persist::TraceLog>,
    dir: Option<PathBuf>,
    since_checkpoint: usize,
    options: StoreOptions,
}

pub struct Store {
    current: RwLock<Arc<Tables>>,
    writer: Mutex<Writer>,
}

impl Store {
    /// A store without persistence.
    pub fn in_memory() -> Store {
        Store {
            current: RwLock::new(Arc::new(Tables::default())),
            writer: Mutex::new(Writer {
                log: None,
                dir: None,
                since_checkpoint: 0,
                options: StoreOptions::default(),
            }),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Store, StoreError> {
        Ok(Store::open_with(dir, StoreOptions::default())?.0)
    }

    /// Opens or creates a store directory, recovering from the trace log.
    pub fn open_with(
        dir: impl AsRef<Path>,
        options: StoreOptions,
    ) -> Result<(Store, OpenReport), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (log, traces, recovery) = persist::TraceLog::open(&dir.join(LOG_FILE), options.fsync)?;
        let (tables, checkpoint_used) = persist::restore(dir, traces);
        let store = Store {
            current: RwLock::new(Arc::new(tables)),
            writer: Mutex::new(Writer {
                log: Some(log),
                dir: Some(dir.to_path_buf()),
                since_checkpoint: 0,
                options,
            }),
        };
        Ok((
            store,
            OpenReport {
                log: recovery,
                checkpoint_used,
            },
        ))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tables: self.current.read().expect("store lock poisoned").clone(),
        }
    }

    /// Validates and ingests one trace.
    pub fn ingest(&self, trace: Trace) -> Result<IngestReceipt, StoreError> {
        let report = validate_dag(&trace);
        if !report.is_ok() {
            return Err(StoreError::Invalid(report));
        }
        self.ingest_validated(trace)
    }

    /// Parses, validates and ingests one interchange document.
    pub fn ingest_document(
        &self,
        raw: &[u8],
    ) -> Result<(IngestReceipt, ValidationReport), StoreError> {
        let (trace, report) = parse_trace(raw)?;
        if !report.is_ok() {
            return Err(StoreError::Invalid(report));
        }
        Ok((self.ingest_validated(trace)?, report))
    }

    fn ingest_validated(&self, trace: Trace) -> Result<IngestReceipt, StoreError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        let current = self.current.read().expect("store lock poisoned").clone();
        if current.contains(&trace.trace_id) {
            return Err(StoreError::Duplicate(trace.trace_id));
        }

        let started = Instant::now();
        let features = extract_features(&trace);
        let mut next = Tables::clone(&current);
        drop(current);
        let canonical = writer.log.is_some().then(|| trace.to_canonical_json());
        let trace_id = trace.trace_id.clone();
        next.apply(trace, &features);
        let preprocessing_us = started.elapsed().as_nanos() as f64 / 1_000.0;

        if let (Some(log), Some(bytes)) = (writer.log.as_mut(), canonical) {
            log.append(&bytes)?;
        }
        let next = Arc::new(next);
        *self.current.write().expect("store lock poisoned") = next.clone();

        writer.since_checkpoint += 1;
        let every = writer.options.checkpoint_every;
        if every > 0 && writer.since_checkpoint >= every {
            if let Some(dir) = writer.dir.clone() {
                persist::write_checkpoint(&dir, &next)?;
                writer.since_checkpoint = 0;
            }
        }
        Ok(IngestReceipt {
            trace_id,
            preprocessing_us,
        })
    }

    /// Syncs the log and writes a checkpoint of the current tables.
    pub fn flush(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        if let Some(log) = writer.log.as_mut() {
            log.sync()?;
        }
        if let Some(dir) = writer.dir.clone() {
            let tables = self.current.read().expect("store lock poisoned").clone();
            persist::write_checkpoint(&dir, &tables)?;
            writer.since_checkpoint = 0;
        }
        Ok(())
    }
}

/// Immutable view of the store after some prefix of the ingestion sequence.
#[derive(Clone)]
pub struct Snapshot {
    tables: Arc<Tables>,
}

impl Snapshot {
    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn stats(&self) -> StoreStats {
        let t = &self.tables;
        StoreStats {
            traces: t.traces.len() as u64,
            tasks: t.task_count,
            events: t.event_count,
            task_types: t.types.len() as u64,
            processes: t.activity.len() as u64,
        }
    }

    pub fn get_trace(&self, trace_id: &str) -> Result<&Trace, StoreError> {
        self.tables
            .stored(trace_id)
            .map(|s| &s.trace)
            .ok_or_else(|| StoreError::NotFound(trace_id.to_string()))
    }

    pub fn summary(&self, trace_id: &str) -> Option<&TraceSummary> {
        self.tables.stored(trace_id).map(|s| &s.summary)
    }

    /// One page of trace summaries. Ties are broken by trace id, so pages are
    /// stable while nothing is ingested.
    pub fn list_traces(
        &self,
        offset: usize,
        limit: usize,
        order: TraceOrder,
    ) -> Result<Vec<TraceSummary>, StoreError> {
        if limit > MAX_PAGE {
            return Err(StoreError::InvalidParam(format!(
                "limit must be at most {MAX_PAGE}, got {limit}"
            )));
        }
        let mut all: Vec<&TraceSummary> = self.tables.traces.iter().map(|s| &s.summary).collect();
        match order {
            TraceOrder::StartTs => {
                all.sort_by(|a, b| (a.start_ts, &a.trace_id).cmp(&(b.start_ts, &b.trace_id)))
            }
            TraceOrder::Duration => all.sort_by(|a, b| {
                b.duration
                    .cmp(&a.duration)
                    .then_with(|| a.trace_id.cmp(&b.trace_id))
            }),
        }
        Ok(all.into_iter().skip(offset).take(limit).cloned().collect())
    }

    /// Stored intervals on `process_id` overlapping the closed window.
    pub fn query_process_activity(
        &self,
        process_id: &str,
        window: (Micros, Micros),
    ) -> Vec<ActivityInterval> {
        self.tables
            .overlapping(process_id, window.0, window.1)
            .unwrap_or_default()
    }

    pub fn load_trace_aggregates(
        &self,
        trace_id: &str,
        params: AggregateParams,
    ) -> Result<(TraceAggregatesPayload, TimingBreakdown), StoreError> {
        let payload = payload::load(&self.tables, trace_id, params)?;
        let timings = payload.timings;
        Ok((payload, timings))
    }

    /// Latency histogram over every ingested instance of `task_type`.
    pub fn histogram(&self, task_type: &str, bins: usize) -> Result<Histogram, StoreError> {
        if !(1..=MAX_BINS).contains(&bins) {
            return Err(StoreError::InvalidParam(format!(
                "bins must lie in [1, {MAX_BINS}], got {bins}"
            )));
        }
        let samples = self
            .tables
            .latency_samples(task_type)
            .ok_or_else(|| AggregationError::UnknownType(task_type.to_string()))?;
        Ok(build_histogram(task_type, &samples, bins, None)?)
    }

    pub fn task_types(&self) -> Vec<String> {
        let mut v: Vec<String> = self.tables.types.iter().map(|(k, _)| k.to_string()).collect();
        v.sort();
        v
    }

    /// The trace with the most tasks, then the most events, then the
    /// lexicographically smallest id.
    pub fn biggest_trace(&self) -> Option<String> {
        self.tables
            .traces
            .iter()
            .map(|s| &s.summary)
            .max_by(|a, b| {
                (a.task_count, a.event_count)
                    .cmp(&(b.task_count, b.event_count))
                    .then_with(|| b.trace_id.cmp(&a.trace_id))
            })
            .map(|s| s.trace_id.clone())
    }

    pub fn canonical_tables(&self) -> CanonicalTables {
        self.tables.canonical()
    }
}

impl AggregateState for Snapshot {
    fn type_instance_count(&self, task_type: &str) -> Option<u64> {
        self.tables.type_instance_count(task_type)
    }
    fn latency_samples(&self, task_type: &str) -> Option<Vec<Micros>> {
        self.tables.latency_samples(task_type)
    }
    fn event_counts(&self, task_type: &str, label: &str) -> Option<PresenceCounts> {
        self.tables.event_counts(task_type, label)
    }
    fn invocation_counts(&self, parent: &str, child: &str) -> Option<PresenceCounts> {
        self.tables.invocation_counts(parent, child)
    }
}

impl ActivityIndex for Snapshot {
    fn overlapping(&self, p: &str, start: Micros, end: Micros) -> Option<Vec<ActivityInterval>> {
        self.tables.overlapping(p, start, end)
    }
}
