use super::{EdgeKind, Endpoint, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    EmptyTrace,
    EmptyTraceId,
    EmptyTaskType,
    EmptyLabel,
    DuplicateId,
    NegativeDuration,
    DanglingRef,
    InvalidEdge,
    Cycle,
    MissingProcess,
    // warnings
    EventOutOfRange,
    EventCycle,
    MissingThread,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::EmptyTrace => "EMPTY_TRACE",
            IssueCode::EmptyTraceId => "EMPTY_TRACE_ID",
            IssueCode::EmptyTaskType => "EMPTY_TASK_TYPE",
            IssueCode::EmptyLabel => "EMPTY_LABEL",
            IssueCode::DuplicateId => "DUPLICATE_ID",
            IssueCode::NegativeDuration => "NEGATIVE_DURATION",
            IssueCode::DanglingRef => "DANGLING_REF",
            IssueCode::InvalidEdge => "INVALID_EDGE",
            IssueCode::Cycle => "CYCLE",
            IssueCode::MissingProcess => "MISSING_PROCESS",
            IssueCode::EventOutOfRange => "EVENT_OUT_OF_RANGE",
            IssueCode::EventCycle => "EVENT_CYCLE",
            IssueCode::MissingThread => "MISSING_THREAD",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
}

/// Errors reject a trace; warnings are informational.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has_error(&self, code: IssueCode) -> bool {
        self.errors.iter().any(|i| i.code == code)
    }

    pub fn has_warning(&self, code: IssueCode) -> bool {
        self.warnings.iter().any(|i| i.code == code)
    }

    pub fn error(&mut self, code: IssueCode, message: impl Into<String>) {
        self.errors.push(Issue {
            code,
            message: message.into(),
        });
    }

    pub fn warn(&mut self, code: IssueCode, message: impl Into<String>) {
        self.warnings.push(Issue {
            code,
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }

    /// Error codes in report order, deduplicated.
    pub fn error_codes(&self) -> Vec<IssueCode> {
        let mut seen = HashSet::new();
        self.errors
            .iter()
            .map(|i| i.code)
            .filter(|c| seen.insert(*c))
            .collect()
    }
}

/// Checks every structural invariant of a trace.
///
/// Acyclicity is enforced at task granularity over invocation edges. A cycle
/// among happened-before event edges is reported as a warning only.
pub fn validate_dag(trace: &Trace) -> ValidationReport {
    let mut report = ValidationReport::default();

    if trace.trace_id.is_empty() {
        report.error(IssueCode::EmptyTraceId, "trace_id is empty");
    }
    if trace.tasks.is_empty() {
        report.error(IssueCode::EmptyTrace, "trace has no tasks");
    }

    let mut task_ids: HashMap<&str, usize> = HashMap::with_capacity(trace.tasks.len());
    for (i, task) in trace.tasks.iter().enumerate() {
        if task_ids.insert(task.task_id.as_str(), i).is_some() {
            report.error(
                IssueCode::DuplicateId,
                format!("duplicate task_id {:?}", task.task_id),
            );
        }
        if task.task_type.is_empty() {
            report.error(
                IssueCode::EmptyTaskType,
                format!("task {:?} has an empty task_type", task.task_id),
            );
        }
        if task.process_id.is_empty() {
            report.error(
                IssueCode::MissingProcess,
                format!("task {:?} has an empty process_id", task.task_id),
            );
        }
        if task.end_ts < task.start_ts {
            report.error(
                IssueCode::NegativeDuration,
                format!(
                    "task {:?} ends at {} before it starts at {}",
                    task.task_id, task.end_ts, task.start_ts
                ),
            );
        }
    }

    let mut event_ids: HashSet<&str> = HashSet::with_capacity(trace.events.len());
    for event in &trace.events {
        if !event_ids.insert(event.event_id.as_str()) {
            report.error(
                IssueCode::DuplicateId,
                format!("duplicate event_id {:?}", event.event_id),
            );
        }
        if event.label.is_empty() {
            report.error(
                IssueCode::EmptyLabel,
                format!("event {:?} has an empty label", event.event_id),
            );
        }
        match task_ids.get(event.task_id.as_str()) {
            None => report.error(
                IssueCode::DanglingRef,
                format!(
                    "event {:?} references unknown task {:?}",
                    event.event_id, event.task_id
                ),
            ),
            Some(&i) => {
                let owner = &trace.tasks[i];
                if event.timestamp < owner.start_ts || event.timestamp > owner.end_ts {
                    report.warn(
                        IssueCode::EventOutOfRange,
                        format!(
                            "event {:?} at {} lies outside task {:?} [{}, {}]",
                            event.event_id,
                            event.timestamp,
                            owner.task_id,
                            owner.start_ts,
                            owner.end_ts
                        ),
                    );
                }
            }
        }
    }

    let resolves = |ep: &Endpoint| match ep {
        Endpoint::Task(id) => task_ids.contains_key(id.as_str()),
        Endpoint::Event(id) => event_ids.contains(id.as_str()),
    };
    for (i, edge) in trace.edges.iter().enumerate() {
        for ep in [&edge.source, &edge.target] {
            if !resolves(ep) {
                report.error(
                    IssueCode::DanglingRef,
                    format!("edge #{i} references unknown endpoint {ep:?}"),
                );
            }
        }
        let shape_ok = match edge.kind {
            EdgeKind::Invocation => {
                matches!((&edge.source, &edge.target), (Endpoint::Task(_), Endpoint::Task(_)))
            }
            EdgeKind::HappenedBefore => {
                matches!((&edge.source, &edge.target), (Endpoint::Event(_), Endpoint::Event(_)))
            }
        };
        if !shape_ok {
            report.error(
                IssueCode::InvalidEdge,
                format!("edge #{i} endpoints do not match kind {:?}", edge.kind),
            );
        }
    }

    if trace.task_topological_order().is_none() {
        report.error(
            IssueCode::Cycle,
            "invocation edges form a cycle at task granularity",
        );
    }
    if trace.event_topological_order().is_none() {
        report.warn(
            IssueCode::EventCycle,
            "happened-before edges form a cycle at event granularity",
        );
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Edge, Event, Task};
    use std::collections::BTreeMap;

    fn task(id: &str, start: i64, end: i64) -> Task {
        Task {
            task_id: id.into(),
            task_type: "svc:op".into(),
            process_id: "p".into(),
            thread_id: None,
            start_ts: start,
            end_ts: end,
            annotations: BTreeMap::new(),
        }
    }

    fn chain(n: usize) -> Trace {
        let tasks = (0..n).map(|i| task(&format!("t{i}"), 0, 10)).collect();
        let edges = (1..n)
            .map(|i| Edge::invocation(format!("t{}", i - 1), format!("t{i}")))
            .collect();
        Trace::new("chain", tasks, vec![], edges)
    }

    #[test]
    fn empty_trace_rejected() {
        let r = validate_dag(&Trace::new("e", vec![], vec![], vec![]));
        assert!(r.has_error(IssueCode::EmptyTrace));
    }

    #[test]
    fn chain_of_five_is_clean() {
        let r = validate_dag(&chain(5));
        assert!(r.is_ok(), "{r:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let mut t = chain(3);
        t.edges.push(Edge::invocation("t2", "t0"));
        assert!(validate_dag(&t).has_error(IssueCode::Cycle));
    }

    #[test]
    fn negative_duration_and_dangling_refs() {
        let mut t = Trace::new("x", vec![task("a", 10, 5)], vec![], vec![]);
        t.events.push(Event {
            event_id: "e".into(),
            task_id: "nope".into(),
            label: "l".into(),
            timestamp: 7,
        });
        t.edges.push(Edge::invocation("a", "ghost"));
        let r = validate_dag(&t);
        assert!(r.has_error(IssueCode::NegativeDuration));
        assert!(r.has_error(IssueCode::DanglingRef));
        assert_eq!(
            r.error_codes(),
            vec![IssueCode::NegativeDuration, IssueCode::DanglingRef]
        );
    }

    #[test]
    fn event_outside_task_is_only_a_warning() {
        let t = Trace::new(
            "x",
            vec![task("a", 0, 10)],
            vec![Event {
                event_id: "e".into(),
                task_id: "a".into(),
                label: "late".into(),
                timestamp: 11,
            }],
            vec![],
        );
        let r = validate_dag(&t);
        assert!(r.is_ok());
        assert!(r.has_warning(IssueCode::EventOutOfRange));
    }

    #[test]
    fn wrong_edge_shape() {
        let mut t = chain(2);
        t.events.push(Event {
            event_id: "e".into(),
            task_id: "t0".into(),
            label: "l".into(),
            timestamp: 1,
        });
        t.edges.push(Edge {
            source: Endpoint::Event("e".into()),
            target: Endpoint::Task("t1".into()),
            kind: EdgeKind::Invocation,
        });
        assert!(validate_dag(&t).has_error(IssueCode::InvalidEdge));
    }

    #[test]
    fn event_cycle_is_a_warning() {
        let mut t = Trace::new(
            "x",
            vec![task("a", 0, 10)],
            vec![
                Event {
                    event_id: "e1".into(),
                    task_id: "a".into(),
                    label: "l".into(),
                    timestamp: 1,
                },
                Event {
                    event_id: "e2".into(),
                    task_id: "a".into(),
                    label: "l".into(),
                    timestamp: 2,
                },
            ],
            vec![],
        );
        t.edges.push(Edge::happened_before("e1", "e2"));
        t.edges.push(Edge::happened_before("e2", "e1"));
        let r = validate_dag(&t);
        assert!(r.is_ok());
        assert!(r.has_warning(IssueCode::EventCycle));
    }

    #[test]
    fn codes_serialize_screaming() {
        assert_eq!(
            serde_json::to_string(&IssueCode::DanglingRef).unwrap(),
            "\"DANGLING_REF\""
        );
        assert_eq!(IssueCode::Cycle.to_string(), "CYCLE");
    }
}
