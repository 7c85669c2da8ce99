//! Synthetic workloads and the load-latency benchmarks built on them.

mod workload;

pub use workload::{
    generate_corpus, trace_id_for, Anomalies, CallSpec, ContentionBurst, Corpus, EventSpec,
    FocalAnomaly, GroundTruth, LatencyModel, LatencyOutlier, RareEdge, RareEvent, SpecError,
    TaskTypeSpec, WorkloadSpec,
};

use crate::model::{Edge, Endpoint, Micros, Trace};
use crate::store::{AggregateParams, Snapshot, Store, StoreError, TimingBreakdown};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io;
use thiserror::Error;

pub const CSV_HEADER: &str = "db_traces,iter,category,latency_us";

/// Default spacing between consecutive copies made by [`replicate_corpus`].
pub const COPY_SHIFT_US: Micros = 1_000;

const WARMUP: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("store is empty")]
    EmptyStore,
    #[error("copy factors must be non-empty, at least 1 and strictly increasing")]
    BadFactors,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    RawTrace,
    Event,
    Edge,
    Contention,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::RawTrace,
        Category::Event,
        Category::Edge,
        Category::Contention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::RawTrace => "raw_trace",
            Category::Event => "event",
            Category::Edge => "edge",
            Category::Contention => "contention",
        }
    }

    fn of(self, t: &TimingBreakdown) -> f64 {
        match self {
            Category::RawTrace => t.raw_trace_us,
            Category::Event => t.event_agg_us,
            Category::Edge => t.edge_agg_us,
            Category::Contention => t.contention_agg_us,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub db_traces: u64,
    pub iter: usize,
    pub category: Category,
    pub latency_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl BenchResult {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER.split(','))
            .map_err(io::Error::from)?;
        for r in &self.rows {
            w.write_record([
                r.db_traces.to_string(),
                r.iter.to_string(),
                r.category.to_string(),
                format!("{:.3}", r.latency_us),
            ])
            .map_err(io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn db_sizes(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.rows.iter().map(|r| r.db_traces).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Median latency per (store size, category).
    pub fn medians(&self) -> BTreeMap<(u64, Category), f64> {
        let mut groups: BTreeMap<(u64, Category), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.db_traces, r.category))
                .or_default()
                .push(r.latency_us);
        }
        groups
            .into_iter()
            .map(|(k, mut v)| (k, median(&mut v)))
            .collect()
    }

    /// Fit of median latency against store size for one category.
    pub fn trend(&self, category: Category) -> Option<LinearFit> {
        let points: Vec<(f64, f64)> = self
            .medians()
            .into_iter()
            .filter(|((_, c), _)| *c == category)
            .map(|((n, _), m)| (n as f64, m))
            .collect();
        linear_fit(&points)
    }

    pub fn summary_table(&self) -> String {
        let medians = self.medians();
        let mut s = format!("{:>10}", "db_traces");
        for c in Category::ALL {
            let _ = write!(s, " {:>14}", format!("{c}_p50_us"));
        }
        s.push('\n');
        for n in self.db_sizes() {
            let _ = write!(s, "{n:>10}");
            for c in Category::ALL {
                let _ = write!(s, " {:>14.1}", medians.get(&(n, c)).copied().unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        if self.db_sizes().len() >= 2 {
            s.push_str("linear fit of p50 vs db_traces:\n");
            for c in Category::ALL {
                if let Some(fit) = self.trend(c) {
                    let _ = writeln!(
                        s,
                        "  {:<11} slope {:>10.5} us/trace  r2 {:.3}",
                        c.as_str(),
                        fit.slope,
                        fit.r2
                    );
                }
            }
        }
        s
    }
}

/// `k` renamed copies of `corpus`, copy-major. Copy `j` gets suffix `.c{j}`
/// on every trace, task and event id and is shifted by `j * shift_us`.
pub fn replicate_corpus(corpus: &[Trace], k: usize, shift_us: Micros) -> Vec<Trace> {
    let mut out = Vec::with_capacity(corpus.len() * k);
    for j in 0..k {
        let suffix = format!(".c{j}");
        let shift = j as Micros * shift_us;
        let rename = |s: &str| format!("{s}{suffix}");
        for t in corpus {
            let tasks = t
                .tasks
                .iter()
                .map(|task| {
                    let mut task = task.clone();
                    task.task_id = rename(&task.task_id);
                    task.start_ts += shift;
                    task.end_ts += shift;
                    task
                })
                .collect();
            let events = t
                .events
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.event_id = rename(&e.event_id);
                    e.task_id = rename(&e.task_id);
                    e.timestamp += shift;
                    e
                })
                .collect();
            let endpoint = |p: &Endpoint| match p {
                Endpoint::Task(id) => Endpoint::Task(rename(id)),
                Endpoint::Event(id) => Endpoint::Event(rename(id)),
            };
            let edges = t
                .edges
                .iter()
                .map(|e| Edge {
                    source: endpoint(&e.source),
                    target: endpoint(&e.target),
                    kind: e.kind,
                })
                .collect();
            out.push(Trace::new(rename(&t.trace_id), tasks, events, edges));
        }
    }
    out
}

/// Loads the biggest trace's aggregates `iterations` times and records the
/// per-category timings. A few unrecorded warm-up loads run first.
pub fn run_breakdown_bench(
    snapshot: &Snapshot,
    iterations: usize,
    params: AggregateParams,
) -> Result<BenchResult, BenchError> {
    let target = snapshot.biggest_trace().ok_or(BenchError::EmptyStore)?;
    let db_traces = snapshot.stats().traces;
    for _ in 0..WARMUP.min(iterations) {
        snapshot.load_trace_aggregates(&target, params)?;
    }
    let mut rows = Vec::with_capacity(iterations * Category::ALL.len());
    for iter in 0..iterations {
        let (_, timings) = snapshot.load_trace_aggregates(&target, params)?;
        for category in Category::ALL {
            rows.push(BenchRow {
                db_traces,
                iter,
                category,
                latency_us: category.of(&timings),
            });
        }
    }
    Ok(BenchResult { rows })
}

#[derive(Debug, Clone, Copy)]
pub struct ScalingOptions {
    /// Give every copy identical timestamps.
    pub overlap_copies: bool,
    pub shift_us: Micros,
    pub params: AggregateParams,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            overlap_copies: false,
            shift_us: COPY_SHIFT_US,
            params: AggregateParams::default(),
        }
    }
}

/// For each copy factor, fills a fresh in-memory store with that many copies
/// of the base corpus, then loads the biggest trace of every store
/// `iterations` times. Stores are visited round-robin within each iteration
/// so that machine noise spreads evenly across sizes.
pub fn run_scaling_bench(
    base: &[Trace],
    copy_factors: &[usize],
    iterations: usize,
    options: ScalingOptions,
) -> Result<BenchResult, BenchError> {
    if copy_factors.is_empty()
        || copy_factors[0] == 0
        || copy_factors.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(BenchError::BadFactors);
    }
    let shift = if options.overlap_copies { 0 } else { options.shift_us };
    let mut targets = Vec::with_capacity(copy_factors.len());
    for &k in copy_factors {
        let store = Store::in_memory();
        for trace in replicate_corpus(base, k, shift) {
            store.ingest(trace)?;
        }
        let snapshot = store.snapshot();
        let target = snapshot.biggest_trace().ok_or(BenchError::EmptyStore)?;
        for _ in 0..WARMUP.min(iterations) {
            snapshot.load_trace_aggregates(&target, options.params)?;
        }
        targets.push((snapshot.stats().traces, snapshot, target));
    }
    let mut result = BenchResult::default();
    for iter in 0..iterations {
        for (db_traces, snapshot, target) in &targets {
            let (_, timings) = snapshot.load_trace_aggregates(target, options.params)?;
            for category in Category::ALL {
                result.rows.push(BenchRow {
                    db_traces: *db_traces,
                    iter,
                    category,
                    latency_us: category.of(&timings),
                });
            }
        }
    }
    result.rows.sort_by_key(|r| r.db_traces);
    Ok(result)
}
