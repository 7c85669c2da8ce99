use super::derive::{derive_invocations, derive_tasks, SourceEvent};
use super::{
    normalize_label, validate_dag, Edge, EdgeKind, Event, IssueCode, Micros, Task, Trace,
    ValidationReport,
};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed trace document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Deserialize)]
struct RawDocument {
    trace_id: String,
    #[serde(default)]
    tasks: Option<Vec<Task>>,
    #[serde(default)]
    events: Vec<RawEvent>,
    #[serde(default)]
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawEvent {
    event_id: String,
    #[serde(default)]
    task_id: Option<String>,
    label: String,
    ts_us: Micros,
    #[serde(default)]
    process_id: Option<String>,
    #[serde(default)]
    thread_id: Option<String>,
    #[serde(default)]
    begin: bool,
}

/// Parses one trace-interchange document and validates it.
///
/// Both document shapes are accepted: with a `tasks` array (span form), or
/// without one, in which case events must carry `process_id`/`thread_id` and
/// tasks are derived from them. Event labels are normalized. Only malformed
/// JSON is an `Err`; structural problems are reported in the
/// [`ValidationReport`] and make the trace unusable when it has errors.
pub fn parse_trace(raw: &[u8]) -> Result<(Trace, ValidationReport), ParseError> {
    let doc: RawDocument = serde_json::from_slice(raw)?;
    Ok(build(doc))
}

pub fn parse_trace_str(raw: &str) -> Result<(Trace, ValidationReport), ParseError> {
    parse_trace(raw.as_bytes())
}

fn build(doc: RawDocument) -> (Trace, ValidationReport) {
    let mut report = ValidationReport::default();
    let (tasks, events, edges) = match doc.tasks {
        Some(tasks) => {
            let mut events = Vec::with_capacity(doc.events.len());
            for raw in doc.events {
                match raw.task_id {
                    Some(task_id) => events.push(Event {
                        event_id: raw.event_id,
                        task_id,
                        label: normalize_label(&raw.label),
                        timestamp: raw.ts_us,
                    }),
                    None => report.error(
                        IssueCode::DanglingRef,
                        format!("event {:?} has no task_id", raw.event_id),
                    ),
                }
            }
            (tasks, events, doc.edges)
        }
        None => {
            let sources: Vec<SourceEvent> = doc
                .events
                .into_iter()
                .map(|raw| SourceEvent {
                    event_id: raw.event_id,
                    label: normalize_label(&raw.label),
                    timestamp: raw.ts_us,
                    process_id: raw.process_id,
                    thread_id: raw.thread_id,
                    begin: raw.begin,
                })
                .collect();
            let derived = derive_tasks(&sources);
            report.merge(derived.report);
            let mut edges = doc.edges;
            if !edges.iter().any(|e| e.kind == EdgeKind::Invocation) {
                let inferred = derive_invocations(&derived.tasks, &derived.events, &edges);
                edges.extend(inferred);
            }
            (derived.tasks, derived.events, edges)
        }
    };
    let trace = Trace::new(doc.trace_id, tasks, events, edges);
    report.merge(validate_dag(&trace));
    (trace, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> serde_json::Value {
        json!({
            "trace_id": "t1",
            "tasks": [
                {"task_id": "A", "task_type": "front:Compose", "process_id": "p1", "start_us": 0, "end_us": 100},
                {"task_id": "B", "task_type": "store:Write", "process_id": "p2", "thread_id": "7", "start_us": 10, "end_us": 60,
                 "annotations": {"host": "h1"}}
            ],
            "events": [{"event_id": "e1", "task_id": "B", "label": "retry 3", "ts_us": 20}],
            "edges": [{"src": {"task": "A"}, "dst": {"task": "B"}, "kind": "invocation"}]
        })
    }

    #[test]
    fn minimal_document() {
        let (trace, report) = parse_trace(minimal().to_string().as_bytes()).unwrap();
        assert!(report.is_ok(), "{report:?}");
        assert_eq!(trace.tasks.len(), 2);
        assert_eq!((trace.start_ts, trace.end_ts), (0, 100));
        assert_eq!(trace.events[0].label, "retry <*>");
        assert_eq!(trace.tasks[1].annotations["host"], "h1");
    }

    #[test]
    fn task_level_cycle() {
        let mut doc = minimal();
        doc["edges"]
            .as_array_mut()
            .unwrap()
            .push(json!({"src": {"task": "B"}, "dst": {"task": "A"}, "kind": "invocation"}));
        let (_, report) = parse_trace(doc.to_string().as_bytes()).unwrap();
        assert_eq!(report.error_codes(), vec![IssueCode::Cycle]);
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_trace(b"{\"trace_id\": "), Err(ParseError::Json(_))));
        assert!(parse_trace(b"{\"tasks\": []}").is_err());
    }

    #[test]
    fn event_without_task_in_span_form() {
        let mut doc = minimal();
        doc["events"] = json!([{"event_id": "e1", "label": "x", "ts_us": 1}]);
        let (_, report) = parse_trace(doc.to_string().as_bytes()).unwrap();
        assert!(report.has_error(IssueCode::DanglingRef));
    }

    #[test]
    fn event_only_form() {
        let doc = json!({
            "trace_id": "x1",
            "events": [
                {"event_id": "a", "label": "ComposePost begin", "ts_us": 100, "process_id": "nginx", "thread_id": "1", "begin": true},
                {"event_id": "b", "label": "compose start", "ts_us": 120, "process_id": "compose", "thread_id": "4"},
                {"event_id": "c", "label": "redis update 0x1f", "ts_us": 150, "process_id": "compose", "thread_id": "4"},
                {"event_id": "d", "label": "ComposePost end", "ts_us": 200, "process_id": "nginx", "thread_id": "1"}
            ],
            "edges": [
                {"src": {"event": "a"}, "dst": {"event": "b"}, "kind": "happened_before"},
                {"src": {"event": "b"}, "dst": {"event": "c"}, "kind": "happened_before"},
                {"src": {"event": "c"}, "dst": {"event": "d"}, "kind": "happened_before"}
            ]
        });
        let (trace, report) = parse_trace(doc.to_string().as_bytes()).unwrap();
        assert!(report.is_ok(), "{report:?}");
        assert_eq!(trace.tasks.len(), 2);
        assert_eq!(trace.tasks[0].task_type, "ComposePost begin");
        assert_eq!(trace.events[2].label, "redis update <*>");
        assert_eq!(trace.invocation_pairs().len(), 1);
        assert_eq!(trace.critical_duration(), 100);
    }

    #[test]
    fn canonical_round_trip() {
        let (trace, _) = parse_trace(minimal().to_string().as_bytes()).unwrap();
        let bytes = trace.to_canonical_json();
        let (again, report) = parse_trace(&bytes).unwrap();
        assert!(report.is_ok());
        assert_eq!(again, trace);
        assert_eq!(again.to_canonical_json(), bytes);
    }
}
