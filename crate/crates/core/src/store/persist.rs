//! On-disk layout of a store directory.
//!
//! ```text
//! <dir>/traces.log    "TRVLOG" 0x00 0x01, then records: u32 LE length + canonical trace JSON
//! <dir>/tables.ckpt   "TRVCKPT" 0x01, then a JSON CheckpointBody
//! ```
//!
//! The log is the source of truth. A checkpoint covers a prefix of the log
//! and is only used if that prefix still matches; tables for the remaining
//! records are rebuilt by replaying them.

use super::columns::{ChunkedVec, Interval, IntervalIndex};
use super::tables::{pair_key, split_key, InstanceRef, Tables};
use super::StoreError;
use crate::aggregation::extract_features;
use crate::model::{Micros, Trace};
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const LOG_FILE: &str = "traces.log";
pub const CHECKPOINT_FILE: &str = "tables.ckpt";
const LOG_MAGIC: &[u8; 8] = b"TRVLOG\x00\x01";
const CHECKPOINT_MAGIC: &[u8; 8] = b"TRVCKPT\x01";

pub struct TraceLog {
    file: File,
    fsync: bool,
}

/// What was found when a log was opened.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogRecovery {
    pub records: usize,
    /// Bytes of an incomplete or unreadable tail that were cut off.
    pub truncated_bytes: u64,
}

impl TraceLog {
    /// Opens (or creates) the log and returns every complete record.
    pub fn open(path: &Path, fsync: bool) -> Result<(TraceLog, Vec<Trace>, LogRecovery), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        if buf.is_empty() {
            file.write_all(LOG_MAGIC)?;
            file.sync_all()?;
            return Ok((TraceLog { file, fsync }, Vec::new(), LogRecovery::default()));
        }
        if buf.len() < LOG_MAGIC.len() || &buf[..LOG_MAGIC.len()] != LOG_MAGIC {
            return Err(StoreError::Corrupt(format!(
                "{} does not start with the trace log header",
                path.display()
            )));
        }

        let mut traces = Vec::new();
        let mut pos = LOG_MAGIC.len();
        while pos + 4 <= buf.len() {
            let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
            let Some(body) = buf.get(pos + 4..pos + 4 + len) else {
                break;
            };
            let Ok(trace) = serde_json::from_slice::<Trace>(body) else {
                break;
            };
            traces.push(trace);
            pos += 4 + len;
        }
        let truncated = (buf.len() - pos) as u64;
        if truncated > 0 {
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let recovery = LogRecovery {
            records: traces.len(),
            truncated_bytes: truncated,
        };
        Ok((TraceLog { file, fsync }, traces, recovery))
    }

    /// Appends one record. With `fsync` off the record still reaches the OS
    /// before this returns, so it survives a process crash.
    pub fn append(&mut self, canonical: &[u8]) -> io::Result<()> {
        let len = u32::try_from(canonical.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "trace record too large"))?;
        let mut record = Vec::with_capacity(4 + canonical.len());
        record.extend_from_slice(&len.to_le_bytes());
        record.extend_from_slice(canonical);
        self.file.write_all(&record)?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.file.sync_all()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    trace_count: u64,
    last_trace_id: Option<String>,
    types: Vec<(String, Vec<Micros>)>,
    events: Vec<(String, String, Vec<(u32, u32)>)>,
    invocations: Vec<(String, String, Vec<(u32, u32)>)>,
    activity: Vec<(String, Vec<(Micros, Micros, u32)>)>,
}

pub fn write_checkpoint(dir: &Path, tables: &Tables) -> Result<(), StoreError> {
    let rows = |table: &super::columns::ShardedMap<Arc<str>, ChunkedVec<InstanceRef>>| {
        let mut v: Vec<(String, String, Vec<(u32, u32)>)> = table
            .iter()
            .map(|(k, rows)| {
                let (a, b) = split_key(k);
                (
                    a.to_string(),
                    b.to_string(),
                    rows.iter().map(|r| (r.trace, r.task)).collect(),
                )
            })
            .collect();
        v.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        v
    };
    let mut types: Vec<_> = tables
        .types
        .iter()
        .map(|(k, col)| (k.to_string(), col.iter().copied().collect()))
        .collect();
    types.sort();
    let mut activity: Vec<_> = tables
        .activity
        .iter()
        .map(|(k, idx)| {
            let mut ivs: Vec<_> = idx.iter().map(|iv| (iv.start, iv.end, iv.trace)).collect();
            ivs.sort();
            (k.to_string(), ivs)
        })
        .collect();
    activity.sort();
    let count = tables.traces.len();
    let body = CheckpointBody {
        trace_count: count as u64,
        last_trace_id: count
            .checked_sub(1)
            .and_then(|i| tables.traces.get(i))
            .map(|s| s.id.to_string()),
        types,
        events: rows(&tables.events),
        invocations: rows(&tables.invocations),
        activity,
    };

    let tmp: PathBuf = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        serde_json::to_writer(io::BufWriter::new(&mut f), &body)
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Tables for `log` from the checkpoint plus replay of the uncovered tail.
/// Returns the tables and whether the checkpoint was usable.
pub fn restore(dir: &Path, log: Vec<Trace>) -> (Tables, bool) {
    let body = read_checkpoint(dir).filter(|b| {
        let n = b.trace_count as usize;
        n <= log.len() && b.last_trace_id.as_deref() == n.checked_sub(1).map(|i| log[i].trace_id.as_str())
    });
    let Some(body) = body else {
        return (Tables::rebuild(log), false);
    };

    let covered = body.trace_count as usize;
    let mut tables = Tables::default();
    let mut rest = log;
    let tail = rest.split_off(covered);
    for trace in rest {
        tables.register(trace);
    }
    for (ty, samples) in body.types {
        tables
            .types
            .insert(Arc::from(ty.as_str()), samples.into_iter().collect());
    }
    let to_rows = |v: Vec<(u32, u32)>| -> ChunkedVec<InstanceRef> {
        v.into_iter()
            .map(|(trace, task)| InstanceRef { trace, task })
            .collect()
    };
    for (a, b, rows) in body.events {
        tables.events.insert(Arc::from(pair_key(&a, &b)), to_rows(rows));
    }
    for (a, b, rows) in body.invocations {
        tables
            .invocations
            .insert(Arc::from(pair_key(&a, &b)), to_rows(rows));
    }
    for (process, ivs) in body.activity {
        let mut index = IntervalIndex::default();
        index.insert_batch(
            ivs.into_iter()
                .map(|(start, end, trace)| Interval { start, end, trace })
                .collect(),
        );
        tables.activity.insert(Arc::from(process.as_str()), index);
    }
    for trace in tail {
        let fs = extract_features(&trace);
        tables.apply(trace, &fs);
    }
    (tables, true)
}

fn read_checkpoint(dir: &Path) -> Option<CheckpointBody> {
    let bytes = fs::read(dir.join(CHECKPOINT_FILE)).ok()?;
    let body = bytes.strip_prefix(CHECKPOINT_MAGIC.as_slice())?;
    serde_json::from_slice(body).ok()
}
