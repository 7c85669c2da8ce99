use super::{Edge, EdgeKind, Endpoint, Event, IssueCode, Micros, Task, ValidationReport};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// An event from an event-only trace, before it has been assigned to a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEvent {
    pub event_id: String,
    pub label: String,
    #[serde(rename = "ts_us")]
    pub timestamp: Micros,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_id: Option<String>,
    /// Marks the event whose label names the enclosing task.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub begin: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DerivedTasks {
    pub tasks: Vec<Task>,
    /// Input events, in input order, with `task_id` filled in.
    pub events: Vec<Event>,
    pub report: ValidationReport,
}

/// Task id for a `(process, thread)` group; `*` is the per-process catch-all.
pub fn derived_task_id(process: &str, thread: Option<&str>) -> String {
    format!("{process}/{}", thread.unwrap_or("*"))
}

/// Groups events into tasks, one per `(process_id, thread_id)`.
///
/// A task spans the min..max timestamp of its events. Its type is the label of
/// the earliest `begin`-marked event, else of the earliest event. Events with
/// no thread land in a per-process catch-all task with a `MISSING_THREAD`
/// warning; events with no process are errors.
pub fn derive_tasks(events: &[SourceEvent]) -> DerivedTasks {
    let mut report = ValidationReport::default();
    // group key -> input indices
    let mut groups: BTreeMap<(String, Option<String>), Vec<usize>> = BTreeMap::new();
    let mut assigned: Vec<Option<String>> = vec![None; events.len()];

    for (i, ev) in events.iter().enumerate() {
        let Some(process) = ev.process_id.as_deref().filter(|p| !p.is_empty()) else {
            report.error(
                IssueCode::MissingProcess,
                format!("event {:?} carries no process_id", ev.event_id),
            );
            continue;
        };
        let thread = ev.thread_id.clone().filter(|t| !t.is_empty());
        if thread.is_none() {
            report.warn(
                IssueCode::MissingThread,
                format!(
                    "event {:?} carries no thread_id; assigned to {}",
                    ev.event_id,
                    derived_task_id(process, None)
                ),
            );
        }
        assigned[i] = Some(derived_task_id(process, thread.as_deref()));
        groups
            .entry((process.to_string(), thread))
            .or_default()
            .push(i);
    }

    let mut tasks: Vec<Task> = groups
        .into_iter()
        .map(|((process, thread), mut members)| {
            members.sort_by_key(|&i| (events[i].timestamp, i));
            let first = &events[members[0]];
            let namer = members
                .iter()
                .map(|&i| &events[i])
                .find(|e| e.begin)
                .unwrap_or(first);
            Task {
                task_id: derived_task_id(&process, thread.as_deref()),
                task_type: namer.label.clone(),
                process_id: process,
                thread_id: thread,
                start_ts: first.timestamp,
                end_ts: events[*members.last().unwrap()].timestamp,
                annotations: BTreeMap::new(),
            }
        })
        .collect();
    tasks.sort_by(|a, b| (a.start_ts, &a.task_id).cmp(&(b.start_ts, &b.task_id)));

    let events = events
        .iter()
        .zip(assigned)
        .filter_map(|(ev, task_id)| {
            Some(Event {
                event_id: ev.event_id.clone(),
                task_id: task_id?,
                label: ev.label.clone(),
                timestamp: ev.timestamp,
            })
        })
        .collect();

    DerivedTasks {
        tasks,
        events,
        report,
    }
}

/// Infers invocation edges for derived tasks: a happened-before edge that
/// crosses from task A into the earliest event of task B means A invoked B.
/// Edges returning into the middle of a task are ordinary causality.
pub fn derive_invocations(tasks: &[Task], events: &[Event], edges: &[Edge]) -> Vec<Edge> {
    let owner: HashMap<&str, &str> = events
        .iter()
        .map(|e| (e.event_id.as_str(), e.task_id.as_str()))
        .collect();
    let mut first_event: HashMap<&str, (Micros, &str)> = HashMap::new();
    for e in events {
        let slot = first_event
            .entry(e.task_id.as_str())
            .or_insert((e.timestamp, e.event_id.as_str()));
        if e.timestamp < slot.0 {
            *slot = (e.timestamp, e.event_id.as_str());
        }
    }
    let known: HashSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for edge in edges.iter().filter(|e| e.kind == EdgeKind::HappenedBefore) {
        let (Endpoint::Event(src), Endpoint::Event(dst)) = (&edge.source, &edge.target) else {
            continue;
        };
        let (Some(&a), Some(&b)) = (owner.get(src.as_str()), owner.get(dst.as_str())) else {
            continue;
        };
        if a == b || !known.contains(a) || !known.contains(b) {
            continue;
        }
        if first_event.get(b).map(|f| f.1) != Some(dst.as_str()) {
            continue;
        }
        if seen.insert((a, b)) {
            out.push(Edge::invocation(a, b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, ts: i64, p: &str, t: Option<&str>) -> SourceEvent {
        SourceEvent {
            event_id: id.into(),
            label: format!("label {id}"),
            timestamp: ts,
            process_id: Some(p.into()),
            thread_id: t.map(Into::into),
            begin: false,
        }
    }

    #[test]
    fn groups_by_process_and_thread() {
        let input = vec![
            ev("a", 1, "p1", Some("t1")),
            ev("b", 2, "p1", Some("t1")),
            ev("c", 3, "p1", Some("t1")),
            ev("d", 2, "p1", Some("t2")),
            ev("e", 9, "p1", Some("t2")),
        ];
        let out = derive_tasks(&input);
        assert_eq!(out.tasks.len(), 2);
        assert!(out.report.is_ok());
        let t1 = &out.tasks[0];
        assert_eq!((t1.task_id.as_str(), t1.start_ts, t1.end_ts), ("p1/t1", 1, 3));
        assert_eq!(out.tasks[1].duration(), 7);
        assert_eq!(out.events.len(), 5);
        assert_eq!(out.events[3].task_id, "p1/t2");
    }

    #[test]
    fn single_event_zero_duration() {
        let out = derive_tasks(&[ev("only", 42, "p", Some("t"))]);
        assert_eq!(out.tasks.len(), 1);
        assert_eq!(out.tasks[0].duration(), 0);
        assert_eq!(out.tasks[0].task_type, "label only");
    }

    #[test]
    fn begin_marker_names_the_task() {
        let mut second = ev("y", 5, "p", Some("t"));
        second.label = "handle ComposePost".into();
        second.begin = true;
        let out = derive_tasks(&[ev("x", 1, "p", Some("t")), second]);
        assert_eq!(out.tasks[0].task_type, "handle ComposePost");
    }

    #[test]
    fn missing_thread_goes_to_catch_all() {
        let out = derive_tasks(&[ev("x", 1, "p", None), ev("y", 2, "p", Some("t"))]);
        assert!(out.report.is_ok());
        assert!(out.report.has_warning(IssueCode::MissingThread));
        assert_eq!(out.tasks.len(), 2);
        assert!(out.tasks.iter().any(|t| t.task_id == "p/*"));
    }

    #[test]
    fn missing_process_is_an_error() {
        let mut e = ev("x", 1, "p", Some("t"));
        e.process_id = None;
        let out = derive_tasks(&[e]);
        assert!(out.report.has_error(IssueCode::MissingProcess));
        assert!(out.events.is_empty());
    }

    #[test]
    fn call_and_return_edges() {
        // p1/t1: a(1) -> [p2/t1: b(2), c(3)] -> d(4)
        let input = vec![
            ev("a", 1, "p1", Some("t1")),
            ev("b", 2, "p2", Some("t1")),
            ev("c", 3, "p2", Some("t1")),
            ev("d", 4, "p1", Some("t1")),
        ];
        let derived = derive_tasks(&input);
        let hb = vec![
            Edge::happened_before("a", "b"),
            Edge::happened_before("b", "c"),
            Edge::happened_before("c", "d"),
        ];
        let inv = derive_invocations(&derived.tasks, &derived.events, &hb);
        assert_eq!(inv, vec![Edge::invocation("p1/t1", "p2/t1")]);
    }
}
