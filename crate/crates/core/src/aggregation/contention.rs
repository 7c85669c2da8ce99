use super::{check_threshold, ActivityIndex, AggregationError};
use crate::model::{Micros, Task, Trace};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Contention bucket width: one millisecond.
pub const BUCKET_US: Micros = 1_000;

/// Per-millisecond count of concurrent requests on a task's process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentionTimeline {
    pub task_id: String,
    pub bucket_ms: u32,
    /// Absolute index of the first bucket, `floor(task start / 1ms)`.
    pub t0_ms: i64,
    /// Distinct requests active on the process in each bucket (always >= 1).
    pub raw_counts: Vec<u32>,
    /// `raw / max raw over the whole trace`, in `[0, 1]`.
    pub scaled: Vec<f64>,
    /// `scaled > threshold`.
    pub threshold_flags: Vec<bool>,
}

impl ContentionTimeline {
    pub fn max_raw(&self) -> u32 {
        self.raw_counts.iter().copied().max().unwrap_or(0)
    }

    /// Maximal runs of flagged buckets as `(first bucket, bucket count)`,
    /// bucket indices absolute.
    pub fn flagged_windows(&self) -> Vec<(i64, usize)> {
        let mut out = Vec::new();
        let mut run: Option<(i64, usize)> = None;
        for (i, &flag) in self.threshold_flags.iter().enumerate() {
            match (flag, run.as_mut()) {
                (true, Some((_, len))) => *len += 1,
                (true, None) => run = Some((self.t0_ms + i as i64, 1)),
                (false, Some(_)) => out.extend(run.take()),
                (false, None) => {}
            }
        }
        out.extend(run);
        out
    }
}

/// Absolute buckets `[first, last)` covered by a busy interval `[start, end]`.
///
/// Buckets are aligned to absolute time; the interval covers every bucket from
/// `floor(start)` up to `ceil(end)` (in ms), and always at least one.
pub fn bucket_range(start: Micros, end: Micros) -> (i64, i64) {
    let first = start.div_euclid(BUCKET_US);
    let last = -((-end).div_euclid(BUCKET_US));
    (first, last.max(first + 1))
}

/// Raw per-bucket counts for one task, counting each request at most once
/// per bucket. The trace's own tasks always count, whether or not it has
/// been ingested into `index`.
fn raw_counts(
    index: &impl ActivityIndex,
    trace: &Trace,
    task: &Task,
) -> Result<(i64, Vec<u32>), AggregationError> {
    let (b0, b1) = bucket_range(task.start_ts, task.end_ts);
    let span = (b1 - b0) as usize;
    let others = index
        .overlapping(&task.process_id, b0 * BUCKET_US, b1 * BUCKET_US - 1)
        .ok_or_else(|| AggregationError::UnknownProcess(task.process_id.clone()))?;

    let own = trace
        .tasks
        .iter()
        .filter(|t| t.process_id == task.process_id)
        .map(|t| (t.start_ts, t.end_ts, trace.trace_id.as_str()));
    let foreign = others
        .iter()
        .filter(|iv| *iv.trace_id != *trace.trace_id)
        .map(|iv| (iv.start_us, iv.end_us, &*iv.trace_id));

    let mut request_of: HashMap<&str, usize> = HashMap::new();
    let mut spans = Vec::new();
    for (start, end, trace_id) in own.chain(foreign) {
        let (f, l) = bucket_range(start, end);
        let (f, l) = (f.max(b0), l.min(b1));
        if f >= l {
            continue;
        }
        let next = request_of.len();
        spans.push((*request_of.entry(trace_id).or_insert(next), f, l));
    }
    // Stamping dedups only when a request's spans are adjacent.
    spans.sort_unstable();
    let mut stamp = vec![usize::MAX; span];
    let mut counts = vec![0u32; span];
    for (req, f, l) in spans {
        for b in f..l {
            let slot = (b - b0) as usize;
            if stamp[slot] != req {
                stamp[slot] = req;
                counts[slot] += 1;
            }
        }
    }
    Ok((b0, counts))
}

/// Contention timelines for every task of `trace`, in task order.
///
/// Scaling divides by the largest raw count across all of the trace's tasks,
/// so the trace's busiest bucket scales to exactly 1.0.
pub fn contention_timelines(
    index: &impl ActivityIndex,
    trace: &Trace,
    threshold: f64,
) -> Result<Vec<ContentionTimeline>, AggregationError> {
    check_threshold(threshold)?;
    let raws = trace
        .tasks
        .iter()
        .map(|t| raw_counts(index, trace, t))
        .collect::<Result<Vec<_>, _>>()?;
    let peak = raws
        .iter()
        .flat_map(|(_, c)| c.iter().copied())
        .max()
        .unwrap_or(0);

    Ok(trace
        .tasks
        .iter()
        .zip(raws)
        .map(|(task, (t0, raw))| {
            let scaled: Vec<f64> = raw
                .iter()
                .map(|&r| if peak == 0 { 0.0 } else { r as f64 / peak as f64 })
                .collect();
            ContentionTimeline {
                task_id: task.task_id.clone(),
                bucket_ms: 1,
                t0_ms: t0,
                threshold_flags: scaled.iter().map(|&s| s > threshold).collect(),
                raw_counts: raw,
                scaled,
            }
        })
        .collect())
}

/// Timeline of a single task; scaling still uses the whole trace's maximum.
pub fn contention_timeline(
    index: &impl ActivityIndex,
    trace: &Trace,
    task_id: &str,
    threshold: f64,
) -> Result<ContentionTimeline, AggregationError> {
    let pos = trace
        .tasks
        .iter()
        .position(|t| t.task_id == task_id)
        .ok_or_else(|| AggregationError::UnknownTask(task_id.to_string()))?;
    Ok(contention_timelines(index, trace, threshold)?.swap_remove(pos))
}
