use super::AggregationError;
use crate::model::Micros;
use serde::{Deserialize, Serialize};

/// Latency distribution of one task type over equal-width linear bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub task_type: String,
    /// `counts.len() + 1` strictly increasing edges, in microseconds.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Smallest and largest sample.
    pub min_us: Micros,
    pub max_us: Micros,
    /// Bin holding the focal task's duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight_bin: Option<usize>,
    /// The focal duration fell outside the sample range and was clamped.
    #[serde(default)]
    pub highlight_out_of_range: bool,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Half-open `[lo, hi)` bounds of bin `i`; the last bin is closed.
    pub fn bin_bounds(&self, i: usize) -> (f64, f64) {
        (self.bin_edges[i], self.bin_edges[i + 1])
    }

    /// Returns a copy with the highlight set for `focal`.
    pub fn with_focal(&self, focal: Micros) -> Histogram {
        let mut h = self.clone();
        let (bin, out) = locate(self.min_us, self.max_us, self.counts.len(), focal);
        h.highlight_bin = Some(bin);
        h.highlight_out_of_range = out;
        h
    }
}

/// Bins `samples` into `bins` equal-width bins over `[min, max]`.
///
/// A single-valued distribution gets one bin `[v, v + 1]` whatever `bins`
/// says. A focal value outside the sample range is clamped into the first or
/// last bin and flagged.
pub fn build_histogram(
    task_type: &str,
    samples: &[Micros],
    bins: usize,
    focal: Option<Micros>,
) -> Result<Histogram, AggregationError> {
    if bins == 0 {
        return Err(AggregationError::InvalidBins(bins));
    }
    let (Some(&min), Some(&max)) = (samples.iter().min(), samples.iter().max()) else {
        return Err(AggregationError::NoSamples);
    };

    let (edges, counts) = if min == max {
        (vec![min as f64, min as f64 + 1.0], vec![samples.len() as u64])
    } else {
        let range = (max - min) as i128;
        let b = bins as i128;
        let edges = (0..=b)
            .map(|i| (min as i128 * b + i * range) as f64 / b as f64)
            .collect();
        let mut counts = vec![0u64; bins];
        for &s in samples {
            counts[index_in_range(min, range, bins, s)] += 1;
        }
        (edges, counts)
    };

    let mut h = Histogram {
        task_type: task_type.to_string(),
        bin_edges: edges,
        counts,
        total: samples.len() as u64,
        min_us: min,
        max_us: max,
        highlight_bin: None,
        highlight_out_of_range: false,
    };
    if let Some(f) = focal {
        let (bin, out) = locate(min, max, h.counts.len(), f);
        h.highlight_bin = Some(bin);
        h.highlight_out_of_range = out;
    }
    Ok(h)
}

/// Exact bin index for `min <= x <= max` with `range = max - min > 0`.
fn index_in_range(min: Micros, range: i128, bins: usize, x: Micros) -> usize {
    let i = ((x - min) as i128 * bins as i128 / range) as usize;
    i.min(bins - 1)
}

fn locate(min: Micros, max: Micros, bins: usize, focal: Micros) -> (usize, bool) {
    if focal < min {
        (0, true)
    } else if focal > max {
        (bins - 1, true)
    } else if min == max {
        (0, false)
    } else {
        (index_in_range(min, (max - min) as i128, bins, focal), false)
    }
}

/// Where a task's latency sits among all instances of its type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPosition {
    pub duration_us: Micros,
    /// Fraction of instances with latency <= this one.
    pub percentile: f64,
    pub median_us: f64,
    /// Slowest other instance, if there is one.
    pub peer_max_us: Option<Micros>,
    /// No other instance of the type was ever this slow.
    pub exceeds_peers: bool,
}

/// `sorted` must be ascending and contain `focal` at least once.
pub fn latency_position(sorted: &[Micros], focal: Micros) -> Result<LatencyPosition, AggregationError> {
    let n = sorted.len();
    if n == 0 {
        return Err(AggregationError::NoSamples);
    }
    let at_or_below = sorted.partition_point(|&s| s <= focal);
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let peer_max = if sorted[n - 1] == focal {
        (n >= 2).then(|| sorted[n - 2])
    } else {
        Some(sorted[n - 1])
    };
    Ok(LatencyPosition {
        duration_us: focal,
        percentile: at_or_below as f64 / n as f64,
        median_us: median,
        peer_max_us: peer_max,
        exceeds_peers: peer_max.is_some_and(|m| focal > m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_range_is_one_bin() {
        let h = build_histogram("T", &[10, 10, 10], 5, None).unwrap();
        assert_eq!(h.counts, vec![3]);
        assert_eq!(h.bin_edges, vec![10.0, 11.0]);
        assert_eq!(h.total, 3);
        assert_eq!(h.highlight_bin, None);
    }

    #[test]
    fn highlight_in_one_to_hundred() {
        let samples: Vec<i64> = (1..=100).collect();
        // width (100 - 1) / 10 = 9.9; (55 - 1) / 9.9 = 5.45 -> bin 5
        let oracle = ((55.0 - 1.0) / ((100.0 - 1.0) / 10.0)) as usize;
        assert_eq!(oracle, 5);
        let h = build_histogram("T", &samples, 10, Some(55)).unwrap();
        assert_eq!(h.highlight_bin, Some(5));
        assert!(!h.highlight_out_of_range);
        let (lo, hi) = h.bin_bounds(5);
        assert!(lo <= 55.0 && 55.0 < hi);
        assert_eq!(h.counts.iter().sum::<u64>(), 100);
    }

    #[test]
    fn focal_far_above_is_clamped() {
        let h = build_histogram("T", &[10, 20, 30], 4, Some(10_000)).unwrap();
        assert_eq!(h.highlight_bin, Some(3));
        assert!(h.highlight_out_of_range);
        let h = build_histogram("T", &[10, 20, 30], 4, Some(1)).unwrap();
        assert_eq!(h.highlight_bin, Some(0));
        assert!(h.highlight_out_of_range);
    }

    #[test]
    fn max_sample_lands_in_last_bin() {
        let h = build_histogram("T", &[0, 5, 10], 2, Some(10)).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.highlight_bin, Some(1));
    }

    #[test]
    fn errors() {
        assert_eq!(
            build_histogram("T", &[], 3, None),
            Err(AggregationError::NoSamples)
        );
        assert_eq!(
            build_histogram("T", &[1], 0, None),
            Err(AggregationError::InvalidBins(0))
        );
    }

    #[test]
    fn with_focal_matches_build() {
        let samples = [3, 9, 27, 81, 243];
        let plain = build_histogram("T", &samples, 7, None).unwrap();
        for f in [0, 3, 50, 81, 243, 1000] {
            assert_eq!(
                plain.with_focal(f),
                build_histogram("T", &samples, 7, Some(f)).unwrap()
            );
        }
        let single = build_histogram("T", &[4, 4], 7, None).unwrap();
        assert_eq!(single.with_focal(4), build_histogram("T", &[4, 4], 7, Some(4)).unwrap());
        assert!(single.with_focal(5).highlight_out_of_range);
        let narrow = build_histogram("T", &[5, 6], 1, Some(6)).unwrap();
        assert!(!narrow.highlight_out_of_range);
    }

    #[test]
    fn position_of_an_outlier() {
        let sorted = [10, 11, 12, 13, 200];
        let p = latency_position(&sorted, 200).unwrap();
        assert_eq!(p.percentile, 1.0);
        assert_eq!(p.median_us, 12.0);
        assert_eq!(p.peer_max_us, Some(13));
        assert!(p.exceeds_peers);
        let p = latency_position(&sorted, 12).unwrap();
        assert!(!p.exceeds_peers);
        assert_eq!(p.percentile, 0.6);
        let lone = latency_position(&[7], 7).unwrap();
        assert_eq!(lone.peer_max_us, None);
        assert!(!lone.exceeds_peers);
    }

    proptest! {
        #[test]
        fn conservation_and_highlight(
            samples in prop::collection::vec(-1_000_000i64..5_000_000, 1..300),
            bins in 1usize..200,
            focal in -2_000_000i64..8_000_000,
        ) {
            let h = build_histogram("T", &samples, bins, Some(focal)).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), h.total);
            prop_assert_eq!(h.total, samples.len() as u64);
            prop_assert_eq!(h.bin_edges.len(), h.counts.len() + 1);
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));

            let min = *samples.iter().min().unwrap();
            let max = *samples.iter().max().unwrap();
            let bin = h.highlight_bin.unwrap();
            let last = h.counts.len() - 1;
            if focal < min || focal > max {
                prop_assert!(h.highlight_out_of_range);
                prop_assert_eq!(bin, if focal < min { 0 } else { last });
            } else {
                prop_assert!(!h.highlight_out_of_range);
                let (lo, hi) = h.bin_bounds(bin);
                let x = focal as f64;
                prop_assert!(lo <= x);
                prop_assert!(x < hi || (bin == last && x <= hi));
            }
            // every sample counted in the bin whose interval contains it
            let mut recount = vec![0u64; h.counts.len()];
            for &s in &samples {
                let x = s as f64;
                let i = (0..h.counts.len())
                    .find(|&i| {
                        let (lo, hi) = h.bin_bounds(i);
                        lo <= x && (x < hi || (i == last && x <= hi))
                    })
                    .unwrap();
                recount[i] += 1;
            }
            prop_assert_eq!(recount, h.counts.clone());
            prop_assert_eq!(h.with_focal(focal), h);
        }
    }
}
