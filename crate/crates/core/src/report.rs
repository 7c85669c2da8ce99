//! Plain-text diagnosis of one trace, derived entirely from one aggregates
//! payload.

use crate::model::{Endpoint, Micros};
use crate::store::TraceAggregatesPayload;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTask {
    pub task_id: String,
    pub task_type: String,
    pub process_id: String,
    pub duration_us: Micros,
    pub median_us: f64,
    /// `duration / median` of the type.
    pub slowdown: f64,
    pub percentile: f64,
    pub bin: usize,
    pub bins: usize,
    /// Slower than every other instance of its type.
    pub beyond_peer_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierEvent {
    pub event_id: String,
    pub task_id: String,
    pub task_type: String,
    pub label: String,
    pub frequency: f64,
    pub presence_count: u64,
    pub instance_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierEdge {
    pub edge_index: usize,
    pub parent_task: String,
    pub child_task: String,
    pub parent_type: String,
    pub child_type: String,
    pub frequency: f64,
    pub count: u64,
    pub parent_instance_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentionWindow {
    pub task_id: String,
    pub process_id: String,
    /// First bucket, in absolute milliseconds.
    pub start_ms: i64,
    /// Window start relative to the trace start; negative when the first
    /// bucket begins before the trace.
    pub offset_us: Micros,
    pub len_ms: usize,
    pub peak_requests: u32,
    pub peak_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub trace_id: String,
    pub root_task_type: String,
    pub duration_us: Micros,
    pub task_count: usize,
    pub event_count: usize,
    pub bins: usize,
    pub threshold: f64,
    pub rarity_cutoff: f64,
    /// Slowest relative to its type's median first; ties keep lane order.
    pub ranking: Vec<RankedTask>,
    pub outlier_events: Vec<OutlierEvent>,
    pub outlier_edges: Vec<OutlierEdge>,
    pub contention_windows: Vec<ContentionWindow>,
}

impl Report {
    pub fn from_payload(p: &TraceAggregatesPayload) -> Report {
        let trace = &p.trace;
        let index = trace.task_index();
        let lane_of: HashMap<&str, usize> = p
            .lanes
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();

        let mut ranking: Vec<(usize, RankedTask)> = p
            .lanes
            .iter()
            .zip(&p.histograms)
            .zip(&p.latency)
            .enumerate()
            .map(|(lane, ((id, hist), pos))| {
                let task = &trace.tasks[index[id.as_str()]];
                let slowdown = if pos.median_us > 0.0 {
                    pos.duration_us as f64 / pos.median_us
                } else if pos.duration_us > 0 {
                    f64::INFINITY
                } else {
                    1.0
                };
                let ranked = RankedTask {
                    task_id: id.clone(),
                    task_type: task.task_type.clone(),
                    process_id: task.process_id.clone(),
                    duration_us: pos.duration_us,
                    median_us: pos.median_us,
                    slowdown,
                    percentile: pos.percentile,
                    bin: hist.highlight_bin.unwrap_or(0),
                    bins: hist.bins(),
                    beyond_peer_range: pos.exceeds_peers || hist.highlight_out_of_range,
                };
                (lane, ranked)
            })
            .collect();
        ranking.sort_by(|a, b| b.1.slowdown.total_cmp(&a.1.slowdown).then(a.0.cmp(&b.0)));

        let event_pos: HashMap<&str, usize> = trace
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.event_id.as_str(), i))
            .collect();
        let mut outlier_events: Vec<OutlierEvent> = p
            .event_rarities
            .iter()
            .filter(|(_, r)| r.outlier)
            .map(|(id, r)| {
                let event = &trace.events[event_pos[id.as_str()]];
                OutlierEvent {
                    event_id: id.clone(),
                    task_id: event.task_id.clone(),
                    task_type: r.rarity.task_type.clone(),
                    label: r.rarity.label.clone(),
                    frequency: r.rarity.frequency,
                    presence_count: r.rarity.presence_count,
                    instance_count: r.rarity.instance_count,
                }
            })
            .collect();
        outlier_events.sort_by_key(|e| {
            let ev = &trace.events[event_pos[e.event_id.as_str()]];
            (lane_of[e.task_id.as_str()], ev.timestamp, e.event_id.clone())
        });

        let mut outlier_edges: Vec<OutlierEdge> = p
            .edge_frequencies
            .iter()
            .filter(|(_, f)| f.outlier)
            .filter_map(|(&i, f)| {
                let edge = &trace.edges[i];
                let (Endpoint::Task(parent), Endpoint::Task(child)) = (&edge.source, &edge.target)
                else {
                    return None;
                };
                Some(OutlierEdge {
                    edge_index: i,
                    parent_task: parent.clone(),
                    child_task: child.clone(),
                    parent_type: f.frequency.parent_type.clone(),
                    child_type: f.frequency.child_type.clone(),
                    frequency: f.frequency.frequency,
                    count: f.frequency.count,
                    parent_instance_count: f.frequency.parent_instance_count,
                })
            })
            .collect();
        outlier_edges.sort_by_key(|e| {
            (
                lane_of[e.parent_task.as_str()],
                lane_of[e.child_task.as_str()],
                e.edge_index,
            )
        });

        let mut contention_windows = Vec::new();
        for id in &p.lanes {
            let Some(tl) = p.contention.get(id) else {
                continue;
            };
            let task = &trace.tasks[index[id.as_str()]];
            for (start, len) in tl.flagged_windows() {
                let from = (start - tl.t0_ms) as usize;
                let slots = from..from + len;
                contention_windows.push(ContentionWindow {
                    task_id: id.clone(),
                    process_id: task.process_id.clone(),
                    start_ms: start,
                    offset_us: start * 1_000 - trace.start_ts,
                    len_ms: len,
                    peak_requests: tl.raw_counts[slots.clone()].iter().copied().max().unwrap_or(0),
                    peak_scaled: tl.scaled[slots].iter().copied().fold(0.0, f64::max),
                });
            }
        }

        Report {
            trace_id: trace.trace_id.clone(),
            root_task_type: trace.root_task_type().unwrap_or_default().to_string(),
            duration_us: trace.critical_duration(),
            task_count: trace.tasks.len(),
            event_count: trace.events.len(),
            bins: p.params.bins,
            threshold: p.params.threshold,
            rarity_cutoff: p.params.rarity_cutoff,
            ranking: ranking.into_iter().map(|(_, r)| r).collect(),
            outlier_events,
            outlier_edges,
            contention_windows,
        }
    }

    /// Tasks slower than every other instance of their type.
    pub fn latency_outliers(&self) -> impl Iterator<Item = &RankedTask> {
        self.ranking.iter().filter(|r| r.beyond_peer_range)
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "trace {} ({}): {} tasks, {} events, {} us",
            self.trace_id, self.root_task_type, self.task_count, self.event_count, self.duration_us
        )?;
        writeln!(
            f,
            "parameters: bins {}, threshold {:.2}, rarity cutoff {:.2}",
            self.bins, self.threshold, self.rarity_cutoff
        )?;

        writeln!(f)?;
        writeln!(f, "latency ranking (duration / type median):")?;
        let width = self.ranking.iter().map(|r| r.task_id.len()).max().unwrap_or(4).max(4);
        let type_width = self.ranking.iter().map(|r| r.task_type.len()).max().unwrap_or(4).max(4);
        writeln!(
            f,
            "  {:>4}  {:<width$}  {:<type_width$}  {:>11}  {:>10}  {:>9}  {:>10}  {:>7}  out_of_range",
            "rank", "task", "type", "duration_us", "median_us", "slowdown", "percentile", "bin"
        )?;
        for (i, r) in self.ranking.iter().enumerate() {
            writeln!(
                f,
                "  {:>4}  {:<width$}  {:<type_width$}  {:>11}  {:>10.1}  {:>8.2}x  {:>9.1}%  {:>7}  {}",
                i + 1,
                r.task_id,
                r.task_type,
                r.duration_us,
                r.median_us,
                r.slowdown,
                r.percentile * 100.0,
                format!("{}/{}", r.bin + 1, r.bins),
                yes_no(r.beyond_peer_range)
            )?;
        }

        writeln!(f)?;
        writeln!(
            f,
            "outlier events (frequency < {:.2}): {}",
            self.rarity_cutoff,
            self.outlier_events.len()
        )?;
        for e in &self.outlier_events {
            writeln!(
                f,
                "  {} in {} ({}): {:?} frequency {:.4} ({}/{} instances)",
                e.event_id, e.task_id, e.task_type, e.label, e.frequency, e.presence_count, e.instance_count
            )?;
        }

        writeln!(f)?;
        writeln!(
            f,
            "outlier edges (frequency < {:.2}): {}",
            self.rarity_cutoff,
            self.outlier_edges.len()
        )?;
        for e in &self.outlier_edges {
            writeln!(
                f,
                "  {} -> {} ({} -> {}): frequency {:.4} ({}/{} parents)",
                e.parent_task, e.child_task, e.parent_type, e.child_type, e.frequency, e.count, e.parent_instance_count
            )?;
        }

        writeln!(f)?;
        writeln!(
            f,
            "contention windows (scaled > {:.2}): {}",
            self.threshold,
            self.contention_windows.len()
        )?;
        for w in &self.contention_windows {
            writeln!(
                f,
                "  {} on {}: {} ms at trace offset {:+} us (bucket {}), peak {} concurrent requests (scaled {:.2})",
                w.task_id, w.process_id, w.len_ms, w.offset_us, w.start_ms, w.peak_requests, w.peak_scaled
            )?;
        }
        Ok(())
    }
}

/// Renders the report for `payload` as text.
pub fn render_report(payload: &TraceAggregatesPayload) -> String {
    let mut s = String::new();
    let _ = write!(s, "{}", Report::from_payload(payload));
    s
}
