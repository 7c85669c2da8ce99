use crate::model::{Micros, Trace};
use serde::Serialize;
use std::collections::BTreeMap;

/// Per-instance row counts keyed by task id.
pub type InstanceRows = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActivityRecord {
    pub start_us: Micros,
    pub end_us: Micros,
    pub trace_id: String,
}

/// Everything the aggregate tables need from one trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeatureSet {
    pub trace_id: String,
    /// task_type -> durations, in task order.
    pub latency: BTreeMap<String, Vec<Micros>>,
    /// task_type -> label -> task_id -> occurrences of the label in that task.
    pub events: BTreeMap<String, BTreeMap<String, InstanceRows>>,
    /// parent_type -> child_type -> parent task_id -> invocations.
    pub invocations: BTreeMap<String, BTreeMap<String, InstanceRows>>,
    /// process_id -> busy intervals.
    pub activity: BTreeMap<String, Vec<ActivityRecord>>,
}

impl FeatureSet {
    pub fn task_count(&self) -> usize {
        self.latency.values().map(Vec::len).sum()
    }

    /// Task instances of `task_type` with at least one `label` event.
    pub fn event_presence(&self, task_type: &str, label: &str) -> usize {
        self.events
            .get(task_type)
            .and_then(|m| m.get(label))
            .map_or(0, BTreeMap::len)
    }
}

/// Extracts the features of one validated trace. Deterministic and
/// independent of any store state.
pub fn extract_features(trace: &Trace) -> FeatureSet {
    let mut fs = FeatureSet {
        trace_id: trace.trace_id.clone(),
        ..FeatureSet::default()
    };
    let index = trace.task_index();

    for task in &trace.tasks {
        fs.latency
            .entry(task.task_type.clone())
            .or_default()
            .push(task.duration());
        fs.activity
            .entry(task.process_id.clone())
            .or_default()
            .push(ActivityRecord {
                start_us: task.start_ts,
                end_us: task.end_ts,
                trace_id: trace.trace_id.clone(),
            });
    }

    for event in &trace.events {
        let Some(&owner) = index.get(event.task_id.as_str()) else {
            continue;
        };
        let task = &trace.tasks[owner];
        *fs.events
            .entry(task.task_type.clone())
            .or_default()
            .entry(event.label.clone())
            .or_default()
            .entry(task.task_id.clone())
            .or_default() += 1;
    }

    for (p, c) in trace.invocation_pairs() {
        let (parent, child) = (&trace.tasks[p], &trace.tasks[c]);
        *fs.invocations
            .entry(parent.task_type.clone())
            .or_default()
            .entry(child.task_type.clone())
            .or_default()
            .entry(parent.task_id.clone())
            .or_default() += 1;
    }

    fs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Edge, Event, Task};

    fn task(id: &str, ty: &str, start: i64, end: i64) -> Task {
        Task {
            task_id: id.into(),
            task_type: ty.into(),
            process_id: format!("proc-{ty}"),
            thread_id: None,
            start_ts: start,
            end_ts: end,
            annotations: Default::default(),
        }
    }

    fn event(id: &str, task: &str, label: &str) -> Event {
        Event {
            event_id: id.into(),
            task_id: task.into(),
            label: label.into(),
            timestamp: 10,
        }
    }

    #[test]
    fn single_task_latency() {
        let t = Trace::new("t", vec![task("a", "T", 100, 250)], vec![], vec![]);
        let fs = extract_features(&t);
        assert_eq!(fs.latency["T"], vec![150]);
        assert_eq!(fs.task_count(), 1);
        assert_eq!(fs.activity["proc-T"].len(), 1);
    }

    #[test]
    fn repeated_label_is_one_presence() {
        let t = Trace::new(
            "t",
            vec![task("a", "T", 0, 100)],
            vec![event("e1", "a", "redis update"), event("e2", "a", "redis update")],
            vec![],
        );
        let fs = extract_features(&t);
        assert_eq!(fs.event_presence("T", "redis update"), 1);
        assert_eq!(fs.events["T"]["redis update"]["a"], 2);
    }

    #[test]
    fn only_invocation_edges_make_pairs() {
        let t = Trace::new(
            "t",
            vec![task("a", "A", 0, 100), task("b", "B", 10, 20)],
            vec![event("e1", "a", "x"), event("e2", "b", "y")],
            vec![Edge::invocation("a", "b"), Edge::happened_before("e1", "e2")],
        );
        let fs = extract_features(&t);
        assert_eq!(fs.invocations.len(), 1);
        assert_eq!(fs.invocations["A"]["B"]["a"], 1);
        assert_eq!(fs.events.len(), 2);
    }
}
