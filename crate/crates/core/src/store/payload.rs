use super::tables::Tables;
use super::StoreError;
use crate::aggregation::{
    build_histogram, contention_timelines, edge_frequency, event_rarity, latency_position,
    AggregateState, ContentionTimeline, EdgeFrequency, EventRarity, Histogram, LatencyPosition,
    DEFAULT_BINS, DEFAULT_RARITY_CUTOFF, DEFAULT_THRESHOLD,
};
use crate::model::{EdgeKind, Endpoint, Micros, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

pub const MAX_BINS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateParams {
    pub bins: usize,
    pub threshold: f64,
    pub rarity_cutoff: f64,
}

impl Default for AggregateParams {
    fn default() -> Self {
        AggregateParams {
            bins: DEFAULT_BINS,
            threshold: DEFAULT_THRESHOLD,
            rarity_cutoff: DEFAULT_RARITY_CUTOFF,
        }
    }
}

impl AggregateParams {
    pub fn validate(&self) -> Result<(), StoreError> {
        if !(1..=MAX_BINS).contains(&self.bins) {
            return Err(StoreError::InvalidParam(format!(
                "bins must lie in [1, {MAX_BINS}], got {}",
                self.bins
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(StoreError::InvalidParam(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.rarity_cutoff) {
            return Err(StoreError::InvalidParam(format!(
                "rarity_cutoff must lie in [0, 1], got {}",
                self.rarity_cutoff
            )));
        }
        Ok(())
    }
}

/// Server-side load time per data category, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub raw_trace_us: f64,
    pub histogram_us: f64,
    pub event_agg_us: f64,
    pub edge_agg_us: f64,
    pub contention_agg_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRarity {
    #[serde(flatten)]
    pub rarity: EventRarity,
    /// `frequency < rarity_cutoff`.
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedEdge {
    #[serde(flatten)]
    pub frequency: EdgeFrequency,
    pub outlier: bool,
}

/// One trace together with every aggregate the single-trace view shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAggregatesPayload {
    pub trace: Trace,
    /// Task ids in Gantt lane order, top to bottom.
    pub lanes: Vec<String>,
    /// One histogram per lane, same order, highlighted at the lane's latency.
    pub histograms: Vec<Histogram>,
    /// Latency position per lane, same order.
    pub latency: Vec<LatencyPosition>,
    /// event_id -> rarity.
    pub event_rarities: BTreeMap<String, FlaggedRarity>,
    /// Index into `trace.edges` -> frequency, invocation edges only.
    pub edge_frequencies: BTreeMap<usize, FlaggedEdge>,
    /// task_id -> timeline.
    pub contention: BTreeMap<String, ContentionTimeline>,
    pub timings: TimingBreakdown,
    pub params: AggregateParams,
}

fn micros_since(t: Instant) -> f64 {
    t.elapsed().as_nanos() as f64 / 1_000.0
}

/// Loads a trace and its aggregates from one consistent table state, timing
/// each data category around its own query phase.
pub(crate) fn load(
    tables: &Tables,
    trace_id: &str,
    params: AggregateParams,
) -> Result<TraceAggregatesPayload, StoreError> {
    params.validate()?;
    let mut timings = TimingBreakdown::default();

    let started = Instant::now();
    let stored = tables
        .stored(trace_id)
        .ok_or_else(|| StoreError::NotFound(trace_id.to_string()))?;
    let trace = stored.trace.clone();
    timings.raw_trace_us = micros_since(started);

    let started = Instant::now();
    let order = trace.lane_order();
    let mut by_type: HashMap<&str, (Vec<Micros>, Histogram)> = HashMap::new();
    let mut histograms = Vec::with_capacity(order.len());
    let mut latency = Vec::with_capacity(order.len());
    for &i in &order {
        let task = &trace.tasks[i];
        if !by_type.contains_key(task.task_type.as_str()) {
            let mut samples = tables
                .latency_samples(&task.task_type)
                .ok_or_else(|| StoreError::Inconsistent(format!("no samples for {}", task.task_type)))?;
            samples.sort_unstable();
            let h = build_histogram(&task.task_type, &samples, params.bins, None)?;
            by_type.insert(task.task_type.as_str(), (samples, h));
        }
        let (sorted, plain) = &by_type[task.task_type.as_str()];
        histograms.push(plain.with_focal(task.duration()));
        latency.push(latency_position(sorted, task.duration())?);
    }
    let lanes = order.iter().map(|&i| trace.tasks[i].task_id.clone()).collect();
    timings.histogram_us = micros_since(started);

    let started = Instant::now();
    let task_index = trace.task_index();
    let mut rarity_by_key: HashMap<(&str, &str), EventRarity> = HashMap::new();
    let mut event_rarities = BTreeMap::new();
    for event in &trace.events {
        let task_type = trace.tasks[task_index[event.task_id.as_str()]].task_type.as_str();
        let key = (task_type, event.label.as_str());
        if !rarity_by_key.contains_key(&key) {
            rarity_by_key.insert(key, event_rarity(tables, task_type, &event.label)?);
        }
        let rarity = rarity_by_key[&key].clone();
        event_rarities.insert(
            event.event_id.clone(),
            FlaggedRarity {
                outlier: rarity.frequency < params.rarity_cutoff,
                rarity,
            },
        );
    }
    timings.event_agg_us = micros_since(started);

    let started = Instant::now();
    let mut freq_by_key: HashMap<(&str, &str), EdgeFrequency> = HashMap::new();
    let mut edge_frequencies = BTreeMap::new();
    for (i, edge) in trace.edges.iter().enumerate() {
        if edge.kind != EdgeKind::Invocation {
            continue;
        }
        let (Endpoint::Task(p), Endpoint::Task(c)) = (&edge.source, &edge.target) else {
            continue;
        };
        let parent = trace.tasks[task_index[p.as_str()]].task_type.as_str();
        let child = trace.tasks[task_index[c.as_str()]].task_type.as_str();
        if !freq_by_key.contains_key(&(parent, child)) {
            freq_by_key.insert((parent, child), edge_frequency(tables, parent, child)?);
        }
        let frequency = freq_by_key[&(parent, child)].clone();
        edge_frequencies.insert(
            i,
            FlaggedEdge {
                outlier: frequency.frequency < params.rarity_cutoff,
                frequency,
            },
        );
    }
    timings.edge_agg_us = micros_since(started);

    let started = Instant::now();
    let contention = contention_timelines(tables, &trace, params.threshold)?
        .into_iter()
        .map(|tl| (tl.task_id.clone(), tl))
        .collect();
    timings.contention_agg_us = micros_since(started);

    Ok(TraceAggregatesPayload {
        trace,
        lanes,
        histograms,
        latency,
        event_rarities,
        edge_frequencies,
        contention,
        timings,
        params,
    })
}
