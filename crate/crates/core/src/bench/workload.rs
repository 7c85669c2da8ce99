use crate::model::{normalize_label, Edge, Event, Micros, Task, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

const COMPOSE_POST: &str = include_str!("../../workloads/compose_post.json");

/// Call trees deeper than this are rejected as malformed.
const MAX_DEPTH: usize = 32;
const BURST_STREAM: u64 = 1 << 40;

#[derive(Debug, Error, PartialEq)]
#[error("invalid workload spec: {0}")]
pub struct SpecError(pub String);

/// A seeded synthetic microservice workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub traces_per_run: usize,
    /// Mean spacing between request arrivals.
    pub arrival_interval_us: Micros,
    #[serde(default = "default_epoch")]
    pub start_us: Micros,
    /// Task type of every request's entry point.
    pub root: String,
    pub task_types: BTreeMap<String, TaskTypeSpec>,
    #[serde(default)]
    pub anomalies: Anomalies,
}

fn default_epoch() -> Micros {
    1_700_000_000_000_000
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTypeSpec {
    /// Service name; replicas become processes `<process>-<n>`.
    pub process: String,
    #[serde(default = "one")]
    pub replicas: u32,
    pub latency: LatencyModel,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub calls: Vec<CallSpec>,
    /// Issue all calls at once instead of one after another.
    #[serde(default)]
    pub parallel: bool,
}

/// Log-normal self time: `ln(t) ~ N(ln(median_us), sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub median_us: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub label: String,
    pub probability: f64,
    /// Independent emission attempts per task instance.
    #[serde(default = "one")]
    pub repeat: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub child: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Anomalies {
    #[serde(default)]
    pub rare_events: Vec<RareEvent>,
    #[serde(default)]
    pub rare_edges: Vec<RareEdge>,
    #[serde(default)]
    pub latency_outliers: Vec<LatencyOutlier>,
    #[serde(default)]
    pub focal: Option<FocalAnomaly>,
}

/// `label` is emitted once in a `rate` fraction of `task_type` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEvent {
    pub task_type: String,
    pub label: String,
    pub rate: f64,
}

/// `parent` additionally calls `child` in a `rate` fraction of its instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEdge {
    pub parent: String,
    pub child: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyOutlier {
    pub task_type: String,
    pub rate: f64,
    pub multiplier: f64,
}

/// One planted anomalous request with known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalAnomaly {
    pub trace_index: usize,
    /// The first instance of this type in the trace runs `latency_multiplier`
    /// times the type's median self time.
    pub task_type: String,
    pub latency_multiplier: f64,
    /// Label forced onto the slow task.
    #[serde(default)]
    pub rare_label: Option<String>,
    #[serde(default)]
    pub contention_burst: Option<ContentionBurst>,
}

/// Extra single-task requests on the slow task's process, all starting while
/// it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentionBurst {
    pub traces: usize,
    pub task_type: String,
    pub duration_us: Micros,
}

/// Where the focal anomaly landed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trace_id: String,
    pub task_id: String,
    pub task_type: String,
    pub process_id: String,
    pub rare_label: Option<String>,
    pub burst_trace_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub traces: Vec<Trace>,
    pub ground_truth: Option<GroundTruth>,
}

impl WorkloadSpec {
    /// The bundled ComposePost-like social network workload.
    pub fn compose_post() -> WorkloadSpec {
        serde_json::from_str(COMPOSE_POST).expect("bundled workload parses")
    }

    pub fn from_json(raw: &str) -> Result<WorkloadSpec, SpecError> {
        let spec: WorkloadSpec =
            serde_json::from_str(raw).map_err(|e| SpecError(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let err = |m: String| Err(SpecError(m));
        let prob = |what: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SpecError(format!("{what}: probability {p} outside [0, 1]")))
            }
        };
        let known = |ty: &str| {
            if self.task_types.contains_key(ty) {
                Ok(())
            } else {
                Err(SpecError(format!("unknown task type {ty:?}")))
            }
        };
        let label_ok = |label: &str| {
            if !label.trim().is_empty() && normalize_label(label) == label {
                Ok(())
            } else {
                Err(SpecError(format!("label {label:?} is empty or not normalized")))
            }
        };

        if self.arrival_interval_us < 0 {
            return err("arrival_interval_us must be non-negative".into());
        }
        known(&self.root)?;
        for (name, ty) in &self.task_types {
            if name.trim().is_empty() || ty.process.trim().is_empty() {
                return err("task types and processes need non-empty names".into());
            }
            if ty.replicas == 0 {
                return err(format!("{name}: replicas must be at least 1"));
            }
            if !(ty.latency.median_us >= 1.0 && ty.latency.sigma >= 0.0 && ty.latency.sigma.is_finite()) {
                return err(format!("{name}: latency needs median_us >= 1 and finite sigma >= 0"));
            }
            for e in &ty.events {
                prob(name, e.probability)?;
                label_ok(&e.label)?;
            }
            for c in &ty.calls {
                prob(name, c.probability)?;
                known(&c.child)?;
            }
        }
        let a = &self.anomalies;
        for r in &a.rare_events {
            known(&r.task_type)?;
            prob("rare event", r.rate)?;
            label_ok(&r.label)?;
        }
        for r in &a.rare_edges {
            known(&r.parent)?;
            known(&r.child)?;
            prob("rare edge", r.rate)?;
        }
        for o in &a.latency_outliers {
            known(&o.task_type)?;
            prob("latency outlier", o.rate)?;
            if !(o.multiplier > 0.0 && o.multiplier.is_finite()) {
                return err("latency outlier multiplier must be positive".into());
            }
        }
        if let Some(f) = &a.focal {
            known(&f.task_type)?;
            if f.trace_index >= self.traces_per_run {
                return err(format!(
                    "focal trace_index {} out of range for {} traces",
                    f.trace_index, self.traces_per_run
                ));
            }
            if !(f.latency_multiplier > 0.0 && f.latency_multiplier.is_finite()) {
                return err("focal latency_multiplier must be positive".into());
            }
            if let Some(l) = &f.rare_label {
                label_ok(l)?;
            }
            if let Some(b) = &f.contention_burst {
                if b.task_type.trim().is_empty() || b.duration_us < 0 {
                    return err("contention burst needs a task type and duration >= 0".into());
                }
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<(), SpecError> {
        fn visit<'a>(
            spec: &'a WorkloadSpec,
            ty: &'a str,
            path: &mut Vec<&'a str>,
            done: &mut BTreeSet<&'a str>,
        ) -> Result<(), SpecError> {
            if path.contains(&ty) {
                return Err(SpecError(format!("call graph cycle through {ty:?}")));
            }
            if path.len() >= MAX_DEPTH {
                return Err(SpecError(format!("call tree deeper than {MAX_DEPTH}")));
            }
            if done.contains(ty) {
                return Ok(());
            }
            path.push(ty);
            for child in spec.children_of(ty) {
                visit(spec, child, path, done)?;
            }
            path.pop();
            done.insert(ty);
            Ok(())
        }
        let mut done = BTreeSet::new();
        for ty in self.task_types.keys() {
            visit(self, ty, &mut Vec::new(), &mut done)?;
        }
        Ok(())
    }

    fn children_of<'a>(&'a self, ty: &str) -> impl Iterator<Item = &'a str> + 'a {
        let calls = self.task_types.get(ty).into_iter().flat_map(|t| &t.calls);
        let rare = self
            .anomalies
            .rare_edges
            .iter()
            .filter(move |r| r.parent == ty)
            .map(|r| r.child.as_str())
            .collect::<Vec<_>>();
        calls.map(|c| c.child.as_str()).chain(rare)
    }
}

pub fn trace_id_for(index: usize) -> String {
    format!("req-{index:06}")
}

/// Generates the corpus described by `spec`. The output depends only on the
/// spec: trace `i` draws from its own ChaCha8 stream.
pub fn generate_corpus(spec: &WorkloadSpec) -> Result<Corpus, SpecError> {
    spec.validate()?;
    let mut traces = Vec::with_capacity(spec.traces_per_run);
    let mut truth = None;
    for i in 0..spec.traces_per_run {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let arrival = spec.start_us
            + i as Micros * spec.arrival_interval_us
            + rng.random_range(0..=spec.arrival_interval_us / 2);
        let focal = spec.anomalies.focal.as_ref().filter(|f| f.trace_index == i);
        let mut b = TraceBuilder::new(spec, &mut rng, trace_id_for(i), focal);
        b.task(&spec.root, arrival, 0);
        let (trace, hit) = b.finish();
        if let (Some(f), Some((task_id, process_id))) = (focal, hit) {
            truth = Some(GroundTruth {
                trace_id: trace.trace_id.clone(),
                task_id,
                task_type: f.task_type.clone(),
                process_id,
                rare_label: f.rare_label.clone(),
                burst_trace_ids: Vec::new(),
            });
        }
        traces.push(trace);
    }

    let burst = spec
        .anomalies
        .focal
        .as_ref()
        .and_then(|f| f.contention_burst.as_ref());
    if let (Some(burst), Some(truth)) = (burst, truth.as_mut()) {
        let focal = &traces[spec.anomalies.focal.as_ref().unwrap().trace_index];
        let slow = focal.task(&truth.task_id).expect("focal task exists");
        let (lo, hi) = (slow.start_ts, slow.end_ts);
        for j in 0..burst.traces {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(BURST_STREAM + j as u64);
            let start = rng.random_range(lo..=hi);
            let id = format!("burst-{j:04}");
            traces.push(Trace::new(
                id.clone(),
                vec![Task {
                    task_id: "s0".into(),
                    task_type: burst.task_type.clone(),
                    process_id: truth.process_id.clone(),
                    thread_id: None,
                    start_ts: start,
                    end_ts: start + burst.duration_us,
                    annotations: BTreeMap::new(),
                }],
                Vec::new(),
                Vec::new(),
            ));
            truth.burst_trace_ids.push(id);
        }
    }
    Ok(Corpus {
        traces,
        ground_truth: truth,
    })
}

struct TraceBuilder<'a, R> {
    spec: &'a WorkloadSpec,
    rng: &'a mut R,
    trace_id: String,
    focal: Option<&'a FocalAnomaly>,
    focal_hit: Option<(String, String)>,
    tasks: Vec<Task>,
    events: Vec<Event>,
    edges: Vec<Edge>,
}

impl<'a, R: Rng> TraceBuilder<'a, R> {
    fn new(
        spec: &'a WorkloadSpec,
        rng: &'a mut R,
        trace_id: String,
        focal: Option<&'a FocalAnomaly>,
    ) -> Self {
        TraceBuilder {
            spec,
            rng,
            trace_id,
            focal,
            focal_hit: None,
            tasks: Vec::new(),
            events: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn self_time(&mut self, ty: &str, model: LatencyModel, is_focal: bool) -> Micros {
        if is_focal {
            let f = self.focal.unwrap();
            return (model.median_us * f.latency_multiplier).round().max(1.0) as Micros;
        }
        let dist = LogNormal::new(model.median_us.ln(), model.sigma).expect("validated");
        let mut t: f64 = dist.sample(self.rng);
        for o in &self.spec.anomalies.latency_outliers {
            if o.task_type == ty && self.rng.random_bool(o.rate) {
                t *= o.multiplier;
            }
        }
        t.round().max(1.0) as Micros
    }

    /// Emits one task starting at `start` (and its subtree); returns its end.
    fn task(&mut self, ty: &str, start: Micros, depth: usize) -> (usize, Micros) {
        let spec = self.spec;
        let def = &spec.task_types[ty];
        let idx = self.tasks.len();
        let task_id = format!("s{idx}");
        let process_id = if def.replicas > 1 {
            format!("{}-{}", def.process, self.rng.random_range(0..def.replicas))
        } else {
            def.process.clone()
        };
        let is_focal = self.focal_hit.is_none() && self.focal.is_some_and(|f| f.task_type == ty);
        if is_focal {
            self.focal_hit = Some((task_id.clone(), process_id.clone()));
        }
        self.tasks.push(Task {
            task_id: task_id.clone(),
            task_type: ty.to_string(),
            process_id,
            thread_id: None,
            start_ts: start,
            end_ts: start,
            annotations: BTreeMap::new(),
        });

        let own = self.self_time(ty, def.latency, is_focal);
        let before = own * 2 / 5;
        let mut children: Vec<&str> = def
            .calls
            .iter()
            .filter(|c| self.rng.random_bool(c.probability))
            .map(|c| c.child.as_str())
            .collect();
        for r in &spec.anomalies.rare_edges {
            if r.parent == ty && self.rng.random_bool(r.rate) {
                children.push(&r.child);
            }
        }

        let mut cursor = start + before;
        let mut calls = Vec::new();
        let mut latest = cursor;
        for child in children {
            let gap = self.rng.random_range(10..=60);
            let at = if def.parallel { cursor + gap } else { latest + gap };
            let (c, end) = if depth + 1 < MAX_DEPTH {
                self.task(child, at, depth + 1)
            } else {
                continue;
            };
            calls.push((c, at));
            latest = latest.max(end);
            if !def.parallel {
                cursor = end;
            }
        }
        let end = latest + (own - before).max(1);
        self.tasks[idx].end_ts = end;

        let mut stamps: Vec<(Micros, String)> = Vec::new();
        for e in &def.events {
            for _ in 0..e.repeat {
                if self.rng.random_bool(e.probability) {
                    stamps.push((self.rng.random_range(start..=end), e.label.clone()));
                }
            }
        }
        for r in &spec.anomalies.rare_events {
            if r.task_type == ty && self.rng.random_bool(r.rate) {
                stamps.push((self.rng.random_range(start..=end), r.label.clone()));
            }
        }
        if is_focal {
            if let Some(label) = self.focal.and_then(|f| f.rare_label.as_ref()) {
                if !stamps.iter().any(|(_, l)| l == label) {
                    stamps.push((self.rng.random_range(start..=end), label.clone()));
                }
            }
        }
        stamps.sort();

        let first_event = self.events.len();
        for (k, (ts, label)) in stamps.into_iter().enumerate() {
            let event_id = format!("{task_id}.e{k}");
            if k > 0 {
                let prev = self.events.last().unwrap().event_id.clone();
                self.edges.push(Edge::happened_before(prev, event_id.clone()));
            }
            self.events.push(Event {
                event_id,
                task_id: task_id.clone(),
                label,
                timestamp: ts,
            });
        }
        let own_events = first_event..self.events.len();
        for (child, at) in calls {
            self.edges
                .push(Edge::invocation(task_id.clone(), self.tasks[child].task_id.clone()));
            let sender = self.events[own_events.clone()]
                .iter()
                .rev()
                .find(|e| e.timestamp <= at)
                .map(|e| e.event_id.clone());
            let child_id = &self.tasks[child].task_id;
            let receiver = self
                .events
                .iter()
                .find(|e| &e.task_id == child_id)
                .map(|e| e.event_id.clone());
            if let (Some(s), Some(r)) = (sender, receiver) {
                self.edges.push(Edge::happened_before(s, r));
            }
        }
        (idx, end)
    }

    fn finish(self) -> (Trace, Option<(String, String)>) {
        (
            Trace::new(self.trace_id, self.tasks, self.events, self.edges),
            self.focal_hit,
        )
    }
}
