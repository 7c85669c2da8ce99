//! Trace data model and the trace-interchange JSON format.
//!
//! A [`Trace`] records one request as a DAG of [`Task`]s (spans) connected by
//! invocation edges, plus labeled [`Event`]s inside tasks that may be ordered
//! by happened-before edges. Documents come in two shapes: the span form with
//! an explicit `tasks` array, and an event-only form where tasks are derived
//! by grouping events per `(process_id, thread_id)` (see [`derive_tasks`]).

mod derive;
mod label;
mod parse;
mod validate;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub use derive::{derive_invocations, derive_tasks, derived_task_id, DerivedTasks, SourceEvent};
pub use label::{normalize_label, LABEL_PLACEHOLDER};
pub use parse::{parse_trace, parse_trace_str, ParseError};
pub use validate::{validate_dag, Issue, IssueCode, ValidationReport};

/// Timestamps and durations are integer microseconds since the Unix epoch.
pub type Micros = i64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// `<service>:<operation>` for span traces; the begin-event label for derived tasks.
    pub task_type: String,
    pub process_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_id: Option<String>,
    #[serde(rename = "start_us")]
    pub start_ts: Micros,
    #[serde(rename = "end_us")]
    pub end_ts: Micros,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

impl Task {
    pub fn duration(&self) -> Micros {
        self.end_ts - self.start_ts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub task_id: String,
    pub label: String,
    #[serde(rename = "ts_us")]
    pub timestamp: Micros,
}

/// One end of an edge, serialized as `{"task": id}` or `{"event": id}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Task(String),
    Event(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Parent task calls a child task.
    Invocation,
    /// Causal ordering between two events.
    HappenedBefore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    #[serde(rename = "src")]
    pub source: Endpoint,
    #[serde(rename = "dst")]
    pub target: Endpoint,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn invocation(parent: impl Into<String>, child: impl Into<String>) -> Self {
        Edge {
            source: Endpoint::Task(parent.into()),
            target: Endpoint::Task(child.into()),
            kind: EdgeKind::Invocation,
        }
    }

    pub fn happened_before(from: impl Into<String>, to: impl Into<String>) -> Self {
        Edge {
            source: Endpoint::Event(from.into()),
            target: Endpoint::Event(to.into()),
            kind: EdgeKind::HappenedBefore,
        }
    }
}

/// A single request's execution record.
///
/// `start_ts` and `end_ts` are derived from the tasks and are not part of the
/// interchange document; they are recomputed whenever a trace is built or
/// deserialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TraceParts")]
pub struct Trace {
    pub trace_id: String,
    pub tasks: Vec<Task>,
    pub events: Vec<Event>,
    pub edges: Vec<Edge>,
    #[serde(skip)]
    pub start_ts: Micros,
    #[serde(skip)]
    pub end_ts: Micros,
}

#[derive(Deserialize)]
struct TraceParts {
    trace_id: String,
    #[serde(default)]
    tasks: Vec<Task>,
    #[serde(default)]
    events: Vec<Event>,
    #[serde(default)]
    edges: Vec<Edge>,
}

impl From<TraceParts> for Trace {
    fn from(p: TraceParts) -> Self {
        Trace::new(p.trace_id, p.tasks, p.events, p.edges)
    }
}

impl Trace {
    pub fn new(
        trace_id: impl Into<String>,
        tasks: Vec<Task>,
        events: Vec<Event>,
        edges: Vec<Edge>,
    ) -> Self {
        let mut trace = Trace {
            trace_id: trace_id.into(),
            tasks,
            events,
            edges,
            start_ts: 0,
            end_ts: 0,
        };
        trace.refresh_bounds();
        trace
    }

    /// Recomputes `start_ts`/`end_ts` from the task list. Empty traces get `0..0`.
    pub fn refresh_bounds(&mut self) {
        self.start_ts = self.tasks.iter().map(|t| t.start_ts).min().unwrap_or(0);
        self.end_ts = self.tasks.iter().map(|t| t.end_ts).max().unwrap_or(0);
    }

    /// Wall-clock extent of the request: `end_ts - start_ts`.
    pub fn critical_duration(&self) -> Micros {
        self.end_ts - self.start_ts
    }

    /// Canonical interchange serialization. Field order is fixed, so equal
    /// traces serialize to identical bytes.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("trace serialization is infallible")
    }

    pub fn task_index(&self) -> HashMap<&str, usize> {
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.as_str(), i))
            .collect()
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Invocation edges resolved to `(parent, child)` task indices.
    /// Edges with unresolvable endpoints are skipped.
    pub fn invocation_pairs(&self) -> Vec<(usize, usize)> {
        let index = self.task_index();
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Invocation)
            .filter_map(|e| match (&e.source, &e.target) {
                (Endpoint::Task(p), Endpoint::Task(c)) => {
                    Some((*index.get(p.as_str())?, *index.get(c.as_str())?))
                }
                _ => None,
            })
            .collect()
    }

    /// Topological order of tasks under invocation edges, or `None` if the
    /// task graph has a cycle.
    pub fn task_topological_order(&self) -> Option<Vec<usize>> {
        topological_order(self.tasks.len(), &self.invocation_pairs())
    }

    /// Topological order of events under happened-before edges, or `None` on a cycle.
    pub fn event_topological_order(&self) -> Option<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.event_id.as_str(), i))
            .collect();
        let pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::HappenedBefore)
            .filter_map(|e| match (&e.source, &e.target) {
                (Endpoint::Event(a), Endpoint::Event(b)) => {
                    Some((*index.get(a.as_str())?, *index.get(b.as_str())?))
                }
                _ => None,
            })
            .collect();
        topological_order(self.events.len(), &pairs)
    }

    /// Gantt lane order: depth-first over the invocation forest, roots and
    /// siblings ordered by start time (then task id). Tasks not reachable
    /// from a root are appended in start order.
    pub fn lane_order(&self) -> Vec<usize> {
        let n = self.tasks.len();
        let by_start = |a: &usize, b: &usize| {
            let (ta, tb) = (&self.tasks[*a], &self.tasks[*b]);
            (ta.start_ts, &ta.task_id).cmp(&(tb.start_ts, &tb.task_id))
        };
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut has_parent = vec![false; n];
        for (p, c) in self.invocation_pairs() {
            if p != c && !children[p].contains(&c) {
                children[p].push(c);
                has_parent[c] = true;
            }
        }
        for list in &mut children {
            list.sort_by(by_start);
        }
        let mut roots: Vec<usize> = (0..n).filter(|i| !has_parent[*i]).collect();
        roots.sort_by(by_start);

        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for root in roots {
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                if std::mem::replace(&mut seen[i], true) {
                    continue;
                }
                order.push(i);
                stack.extend(children[i].iter().rev().copied().filter(|c| !seen[*c]));
            }
        }
        let mut rest: Vec<usize> = (0..n).filter(|i| !seen[*i]).collect();
        rest.sort_by(by_start);
        order.extend(rest);
        order
    }

    /// Task type of the first lane (the request's entry point).
    pub fn root_task_type(&self) -> Option<&str> {
        self.lane_order()
            .first()
            .map(|i| self.tasks[*i].task_type.as_str())
    }
}

/// Kahn's algorithm; `None` when the graph contains a cycle (self-loops included).
pub(crate) fn topological_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        out[a].push(b);
        indegree[b] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|i| indegree[*i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &j in &out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    (order.len() == n).then_some(order)
}
