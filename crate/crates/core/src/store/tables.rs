use super::columns::{ChunkedVec, Interval, IntervalIndex, ShardedMap};
use crate::aggregation::{
    extract_features, ActivityIndex, ActivityInterval, AggregateState, FeatureSet, PresenceCounts,
};
use crate::model::{Micros, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// Row in an event or invocation table: one occurrence inside task instance
/// `task` of trace ordinal `trace`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub trace: u32,
    pub task: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub root_task_type: String,
    pub start_ts: Micros,
    pub duration: Micros,
    pub task_count: usize,
    pub event_count: usize,
}

#[derive(Debug)]
pub struct StoredTrace {
    pub id: Arc<str>,
    pub trace: Trace,
    pub summary: TraceSummary,
}

pub(crate) fn summarize(trace: &Trace) -> TraceSummary {
    TraceSummary {
        trace_id: trace.trace_id.clone(),
        root_task_type: trace.root_task_type().unwrap_or_default().to_string(),
        start_ts: trace.start_ts,
        duration: trace.critical_duration(),
        task_count: trace.tasks.len(),
        event_count: trace.events.len(),
    }
}

/// Key separator for composite `(type, label)` / `(parent, child)` keys.
const SEP: char = '\u{1f}';

pub(crate) fn pair_key(a: &str, b: &str) -> String {
    let mut k = String::with_capacity(a.len() + b.len() + 1);
    k.push_str(a);
    k.push(SEP);
    k.push_str(b);
    k
}

pub(crate) fn split_key(k: &str) -> (&str, &str) {
    k.split_once(SEP).expect("composite key")
}

/// All aggregate tables as of one point in the ingestion sequence.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub(crate) traces: ChunkedVec<Arc<StoredTrace>>,
    pub(crate) trace_ids: ShardedMap<Arc<str>, u32>,
    /// task_type -> latency column (one sample per instance).
    pub(crate) types: ShardedMap<Arc<str>, ChunkedVec<Micros>>,
    /// (task_type, label) -> occurrence rows.
    pub(crate) events: ShardedMap<Arc<str>, ChunkedVec<InstanceRef>>,
    /// (parent_type, child_type) -> invocation rows keyed by parent instance.
    pub(crate) invocations: ShardedMap<Arc<str>, ChunkedVec<InstanceRef>>,
    pub(crate) activity: ShardedMap<Arc<str>, IntervalIndex>,
    pub(crate) task_count: u64,
    pub(crate) event_count: u64,
}

impl Tables {
    pub fn trace_count(&self) -> usize {
        self.traces.len()
    }

    pub fn contains(&self, trace_id: &str) -> bool {
        self.trace_ids.contains_key(trace_id)
    }

    pub fn stored(&self, trace_id: &str) -> Option<&Arc<StoredTrace>> {
        let ord = *self.trace_ids.get(trace_id)?;
        self.traces.get(ord as usize)
    }

    /// Appends one trace and its extracted features. The caller guarantees
    /// the trace is valid and not yet present.
    pub fn apply(&mut self, trace: Trace, features: &FeatureSet) {
        let ordinal = self.traces.len() as u32;
        let task_pos: HashMap<&str, u32> = trace
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.as_str(), i as u32))
            .collect();
        let row = |task_id: &str| InstanceRef {
            trace: ordinal,
            task: task_pos[task_id],
        };

        for (task_type, samples) in &features.latency {
            let column = self.types.entry_or_default(Arc::from(task_type.as_str()));
            for &s in samples {
                column.push(s);
            }
        }
        for (task_type, labels) in &features.events {
            for (label, instances) in labels {
                let rows = self
                    .events
                    .entry_or_default(Arc::from(pair_key(task_type, label)));
                for (task_id, &n) in instances {
                    for _ in 0..n {
                        rows.push(row(task_id));
                    }
                }
            }
        }
        for (parent_type, children) in &features.invocations {
            for (child_type, parents) in children {
                let rows = self
                    .invocations
                    .entry_or_default(Arc::from(pair_key(parent_type, child_type)));
                for (task_id, &n) in parents {
                    for _ in 0..n {
                        rows.push(row(task_id));
                    }
                }
            }
        }
        for (process, records) in &features.activity {
            let batch = records
                .iter()
                .map(|r| Interval {
                    start: r.start_us,
                    end: r.end_us,
                    trace: ordinal,
                })
                .collect();
            self.activity
                .entry_or_default(Arc::from(process.as_str()))
                .insert_batch(batch);
        }

        self.register(trace);
    }

    /// Adds the trace itself (not its features) and returns its ordinal.
    pub(crate) fn register(&mut self, trace: Trace) -> u32 {
        let ordinal = self.traces.len() as u32;
        let id: Arc<str> = Arc::from(trace.trace_id.as_str());
        self.task_count += trace.tasks.len() as u64;
        self.event_count += trace.events.len() as u64;
        let summary = summarize(&trace);
        self.trace_ids.insert(id.clone(), ordinal);
        self.traces.push(Arc::new(StoredTrace { id, trace, summary }));
        ordinal
    }

    /// Builds tables from scratch over `traces`, in order.
    pub fn rebuild<I: IntoIterator<Item = Trace>>(traces: I) -> Tables {
        let mut t = Tables::default();
        for trace in traces {
            let fs = extract_features(&trace);
            t.apply(trace, &fs);
        }
        t
    }

    fn trace_id_of(&self, ordinal: u32) -> &Arc<str> {
        &self.traces.get(ordinal as usize).expect("valid ordinal").id
    }

    fn task_id_of(&self, r: InstanceRef) -> &str {
        let stored = self.traces.get(r.trace as usize).expect("valid ordinal");
        &stored.trace.tasks[r.task as usize].task_id
    }

    /// Order-independent dump of every aggregate table, keyed by trace and
    /// task ids instead of ingestion ordinals.
    pub fn canonical(&self) -> CanonicalTables {
        let mut out = CanonicalTables {
            trace_count: self.traces.len() as u64,
            task_count: self.task_count,
            event_count: self.event_count,
            ..CanonicalTables::default()
        };
        for (ty, column) in self.types.iter() {
            let mut samples: Vec<Micros> = column.iter().copied().collect();
            samples.sort_unstable();
            out.types.insert(
                ty.to_string(),
                CanonicalType {
                    instance_count: samples.len() as u64,
                    latencies: samples,
                },
            );
        }
        let dump_rows = |table: &ShardedMap<Arc<str>, ChunkedVec<InstanceRef>>| {
            let mut m: BTreeMap<String, BTreeMap<String, CanonicalRows>> = BTreeMap::new();
            for (key, rows) in table.iter() {
                let (a, b) = split_key(key);
                let mut per: BTreeMap<(String, String), u64> = BTreeMap::new();
                for r in rows.iter() {
                    *per.entry((
                        self.trace_id_of(r.trace).to_string(),
                        self.task_id_of(*r).to_string(),
                    ))
                    .or_default() += 1;
                }
                m.entry(a.to_string()).or_default().insert(
                    b.to_string(),
                    CanonicalRows {
                        occurrences: rows.len() as u64,
                        presence: per.len() as u64,
                        instances: per.into_iter().map(|((t, k), n)| (t, k, n)).collect(),
                    },
                );
            }
            m
        };
        out.events = dump_rows(&self.events);
        out.invocations = dump_rows(&self.invocations);
        for (process, index) in self.activity.iter() {
            let mut ivs: Vec<(Micros, Micros, String)> = index
                .iter()
                .map(|iv| (iv.start, iv.end, self.trace_id_of(iv.trace).to_string()))
                .collect();
            ivs.sort();
            out.activity.insert(process.to_string(), ivs);
        }
        out
    }
}

/// Counts distinct instances in an append-ordered row column. Rows of one
/// instance are contiguous because a trace is appended in one step.
pub(crate) fn presence(rows: &ChunkedVec<InstanceRef>) -> PresenceCounts {
    let mut instances = 0;
    let mut last = None;
    for r in rows.iter() {
        if last != Some(*r) {
            instances += 1;
            last = Some(*r);
        }
    }
    PresenceCounts {
        occurrences: rows.len() as u64,
        instances,
    }
}

impl AggregateState for Tables {
    fn type_instance_count(&self, task_type: &str) -> Option<u64> {
        self.types.get(task_type).map(|c| c.len() as u64)
    }

    fn latency_samples(&self, task_type: &str) -> Option<Vec<Micros>> {
        self.types.get(task_type).map(|c| c.iter().copied().collect())
    }

    fn event_counts(&self, task_type: &str, label: &str) -> Option<PresenceCounts> {
        self.events.get(pair_key(task_type, label).as_str()).map(presence)
    }

    fn invocation_counts(&self, parent_type: &str, child_type: &str) -> Option<PresenceCounts> {
        self.invocations
            .get(pair_key(parent_type, child_type).as_str())
            .map(presence)
    }
}

impl ActivityIndex for Tables {
    fn overlapping(
        &self,
        process_id: &str,
        start: Micros,
        end: Micros,
    ) -> Option<Vec<ActivityInterval>> {
        let index = self.activity.get(process_id)?;
        Some(
            index
                .overlapping(start, end)
                .map(|iv| ActivityInterval {
                    start_us: iv.start,
                    end_us: iv.end,
                    trace_id: self.trace_id_of(iv.trace).clone(),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalType {
    pub instance_count: u64,
    /// Sorted ascending.
    pub latencies: Vec<Micros>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRows {
    pub occurrences: u64,
    pub presence: u64,
    /// `(trace_id, task_id, occurrences)`, sorted.
    pub instances: Vec<(String, String, u64)>,
}

/// Ingestion-order-independent form of [`Tables`]; two stores holding the
/// same trace set produce byte-identical [`CanonicalTables::to_bytes`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTables {
    pub trace_count: u64,
    pub task_count: u64,
    pub event_count: u64,
    pub types: BTreeMap<String, CanonicalType>,
    pub events: BTreeMap<String, BTreeMap<String, CanonicalRows>>,
    pub invocations: BTreeMap<String, BTreeMap<String, CanonicalRows>>,
    /// process -> sorted `(start, end, trace_id)`.
    pub activity: BTreeMap<String, Vec<(Micros, Micros, String)>>,
}

impl CanonicalTables {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("canonical tables serialize")
    }
}
