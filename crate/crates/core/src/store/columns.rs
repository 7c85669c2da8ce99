//! Copy-on-write containers behind the store's snapshots.
//!
//! Cloning any of these is cheap (a handful of `Arc` increments), and a
//! mutation only copies the chunk, shard or run it touches when that piece
//! is still shared with an older snapshot.

use crate::model::Micros;
use std::borrow::Borrow;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{BuildHasher, BuildHasherDefault, Hash};
use std::sync::Arc;

const CHUNK: usize = 1024;

/// Append-only vector stored as shared fixed-size chunks.
#[derive(Debug, Clone)]
pub struct ChunkedVec<T> {
    chunks: Vec<Arc<Vec<T>>>,
    len: usize,
}

impl<T> Default for ChunkedVec<T> {
    fn default() -> Self {
        ChunkedVec {
            chunks: Vec::new(),
            len: 0,
        }
    }
}

impl<T: Clone> ChunkedVec<T> {
    pub fn push(&mut self, value: T) {
        if self.chunks.last().is_none_or(|c| c.len() == CHUNK) {
            self.chunks.push(Arc::new(Vec::with_capacity(CHUNK)));
        }
        Arc::make_mut(self.chunks.last_mut().unwrap()).push(value);
        self.len += 1;
    }
}

impl<T> ChunkedVec<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.chunks.get(i / CHUNK)?.get(i % CHUNK)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.chunks.iter().flat_map(|c| c.iter())
    }
}

impl<T: Clone> FromIterator<T> for ChunkedVec<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut v = ChunkedVec::default();
        for x in iter {
            v.push(x);
        }
        v
    }
}

const SHARDS: usize = 64;
type Hasher = BuildHasherDefault<DefaultHasher>;

/// Hash map split into shards that are copied independently on write.
#[derive(Debug, Clone)]
pub struct ShardedMap<K, V> {
    shards: Vec<Arc<HashMap<K, V, Hasher>>>,
}

impl<K, V> Default for ShardedMap<K, V> {
    fn default() -> Self {
        ShardedMap {
            shards: (0..SHARDS).map(|_| Arc::new(HashMap::default())).collect(),
        }
    }
}

fn shard_of<Q: Hash + ?Sized>(key: &Q) -> usize {
    (Hasher::default().hash_one(key) as usize) % SHARDS
}

impl<K: Hash + Eq + Clone, V: Clone> ShardedMap<K, V> {
    pub fn get<Q>(&self, key: &Q) -> Option<&V>
    where
        K: Borrow<Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.shards[shard_of(key)].get(key)
    }

    pub fn contains_key<Q>(&self, key: &Q) -> bool
    where
        K: Borrow<Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.get(key).is_some()
    }

    pub fn insert(&mut self, key: K, value: V) -> Option<V> {
        Arc::make_mut(&mut self.shards[shard_of(&key)]).insert(key, value)
    }

    /// Mutable access to the value under `key`, inserting a default first.
    pub fn entry_or_default(&mut self, key: K) -> &mut V
    where
        V: Default,
    {
        Arc::make_mut(&mut self.shards[shard_of(&key)])
            .entry(key)
            .or_default()
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &V)> + '_ {
        self.shards.iter().flat_map(|s| s.iter())
    }
}

/// One busy interval; `trace` is the owning trace's ordinal in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: Micros,
    pub end: Micros,
    pub trace: u32,
}

/// Per-process activity index: start-sorted runs merged log-structured style,
/// so there are O(log n) runs and inserts never rewrite a shared run in place.
#[derive(Debug, Clone, Default)]
pub struct IntervalIndex {
    runs: Vec<Arc<Vec<Interval>>>,
    max_duration: Micros,
    len: usize,
}

impl IntervalIndex {
    #[cfg(test)]
    fn len(&self) -> usize {
        self.len
    }

    #[cfg(test)]
    fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn insert_batch(&mut self, mut batch: Vec<Interval>) {
        if batch.is_empty() {
            return;
        }
        batch.sort_by_key(|iv| (iv.start, iv.end, iv.trace));
        for iv in &batch {
            self.max_duration = self.max_duration.max(iv.end - iv.start);
        }
        self.len += batch.len();
        self.runs.push(Arc::new(batch));
        while self.runs.len() >= 2 {
            let n = self.runs.len();
            if self.runs[n - 2].len() > 2 * self.runs[n - 1].len() {
                break;
            }
            let newer = self.runs.pop().unwrap();
            let older = self.runs.pop().unwrap();
            self.runs.push(Arc::new(merge_sorted(&older, &newer)));
        }
    }

    /// Intervals with `start <= end_w && end >= start_w`.
    ///
    /// Each run is binary-searched for the first start that could still reach
    /// the window (`start_w - max_duration`), then scanned until starts pass
    /// `end_w`.
    pub fn overlapping(&self, start_w: Micros, end_w: Micros) -> impl Iterator<Item = &Interval> {
        let floor = start_w.saturating_sub(self.max_duration);
        self.runs.iter().flat_map(move |run| {
            let from = run.partition_point(|iv| iv.start < floor);
            run[from..]
                .iter()
                .take_while(move |iv| iv.start <= end_w)
                .filter(move |iv| iv.end >= start_w)
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interval> {
        self.runs.iter().flat_map(|r| r.iter())
    }
}

fn merge_sorted(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let key = |iv: &Interval| (iv.start, iv.end, iv.trace);
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if key(&a[i]) <= key(&b[j]) {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
