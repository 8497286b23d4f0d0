use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100_000;

/// Which extreme of the distribution a set retains exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailSide {
    /// Largest scores (impostor sets: FMR lives here).
    High,
    /// Smallest scores (genuine sets: FNMR lives here).
    Low,
}

impl TailSide {
    /// Maps a score to a key where larger means more extreme.
    #[inline]
    fn key(self, s: f64) -> f64 {
        match self {
            TailSide::High => s,
            TailSide::Low => -s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetConfig {
    /// Uniform histogram bins over [-1, 1].
    pub bins: usize,
    /// Number of extreme scores kept exactly.
    pub tail_capacity: usize,
    pub side: TailSide,
}

impl SetConfig {
    pub fn new(side: TailSide, tail_capacity: usize) -> Self {
        Self {
            bins: DEFAULT_BINS,
            tail_capacity,
            side,
        }
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    #[inline]
    pub fn bin_of(&self, s: f64) -> usize {
        let b = ((s + 1.0) * 0.5 * self.bins as f64).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }

    pub fn bin_lower(&self, bin: usize) -> f64 {
        -1.0 + 2.0 * bin as f64 / self.bins as f64
    }

    pub fn bin_width(&self) -> f64 {
        2.0 / self.bins as f64
    }
}

/// `ceil(count * tail_frac)`, capped at `count`.
pub fn tail_capacity(count: u64, tail_frac: f64) -> usize {
    ((count as f64 * tail_frac).ceil() as u64).min(count) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming builder for a [`ScoreSet`]; a bounded min-heap keeps the
/// `tail_capacity` most extreme scores.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    config: SetConfig,
    count: u64,
    heap: BinaryHeap<Reverse<Key>>,
    histogram: Vec<u64>,
    min: f64,
    max: f64,
}

impl ScoreAccumulator {
    pub fn new(config: SetConfig) -> Self {
        Self {
            config,
            count: 0,
            heap: BinaryHeap::new(),
            histogram: Vec::new(),
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    #[inline]
    pub fn push(&mut self, s: f64) {
        self.count += 1;
        if self.histogram.is_empty() {
            self.histogram = vec![0; self.config.bins];
        }
        self.histogram[self.config.bin_of(s)] += 1;
        self.min = self.min.min(s);
        self.max = self.max.max(s);
        self.offer(self.config.side.key(s));
    }

    #[inline]
    fn offer(&mut self, key: f64) {
        let cap = self.config.tail_capacity;
        if self.heap.len() < cap {
            self.heap.push(Reverse(Key(key)));
        } else if cap > 0 {
            let mut top = self.heap.peek_mut().unwrap();
            if key.total_cmp(&top.0 .0) == Ordering::Greater {
                *top = Reverse(Key(key));
            }
        }
    }

    pub fn absorb(&mut self, other: ScoreAccumulator) {
        debug_assert_eq!(self.config, other.config);
        if other.count == 0 {
            return;
        }
        self.count += other.count;
        if self.histogram.is_empty() {
            self.histogram = other.histogram;
        } else {
            for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
                *a += b;
            }
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        for Reverse(Key(k)) in other.heap {
            self.offer(k);
        }
    }

    pub fn finish(self) -> ScoreSet {
        let side = self.config.side;
        let mut keys: Vec<f64> = self.heap.into_iter().map(|Reverse(Key(k))| k).collect();
        keys.sort_by(|a, b| b.total_cmp(a));
        let tail = keys.into_iter().map(|k| side.key(k)).collect();
        let histogram = if self.histogram.is_empty() {
            vec![0; self.config.bins]
        } else {
            self.histogram
        };
        ScoreSet {
            config: self.config,
            count: self.count,
            tail,
            histogram,
            min: self.min,
            max: self.max,
        }
    }
}

/// Summary of one score population: count, extrema, a full histogram and
/// the exact `tail_capacity` most extreme scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    config: SetConfig,
    count: u64,
    /// Most extreme first: descending for [`TailSide::High`], ascending for [`TailSide::Low`].
    tail: Vec<f64>,
    histogram: Vec<u64>,
    min: f64,
    max: f64,
}

impl ScoreSet {
    pub fn empty(config: SetConfig) -> Self {
        ScoreAccumulator::new(config).finish()
    }

    pub fn from_scores(config: SetConfig, scores: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = ScoreAccumulator::new(config);
        for s in scores {
            acc.push(s);
        }
        acc.finish()
    }

    pub(crate) fn from_parts(
        config: SetConfig,
        count: u64,
        tail: Vec<f64>,
        histogram: Vec<u64>,
        min: f64,
        max: f64,
    ) -> Result<Self> {
        let hist_total: u64 = histogram.iter().sum();
        if histogram.len() != config.bins || hist_total != count {
            return Err(Error::Cache(format!(
                "histogram of {} bins sums to {hist_total}, expected {} bins summing to {count}",
                histogram.len(),
                config.bins
            )));
        }
        if tail.len() != config.tail_capacity.min(count as usize) {
            return Err(Error::Cache(format!(
                "tail holds {} scores, expected {}",
                tail.len(),
                config.tail_capacity.min(count as usize)
            )));
        }
        let key = |s: f64| config.side.key(s);
        if tail.windows(2).any(|w| key(w[0]) < key(w[1])) {
            return Err(Error::Cache("tail is not sorted".into()));
        }
        Ok(Self {
            config,
            count,
            tail,
            histogram,
            min,
            max,
        })
    }

    pub fn config(&self) -> &SetConfig {
        &self.config
    }

    pub fn side(&self) -> TailSide {
        self.config.side
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn tail(&self) -> &[f64] {
        &self.tail
    }

    /// True when the tail holds every score of the set.
    pub fn tail_is_complete(&self) -> bool {
        self.tail.len() as u64 == self.count
    }

    pub fn histogram(&self) -> &[u64] {
        &self.histogram
    }

    pub fn min(&self) -> Option<f64> {
        (self.count > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.count > 0).then_some(self.max)
    }

    pub(crate) fn raw_min(&self) -> f64 {
        self.min
    }

    pub(crate) fn raw_max(&self) -> f64 {
        self.max
    }

    pub fn mean_estimate(&self) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        let half = self.config.bin_width() / 2.0;
        let sum: f64 = self
            .histogram
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| c as f64 * (self.config.bin_lower(b) + half))
            .sum();
        Some(sum / self.count as f64)
    }

    /// Combines two sets over disjoint score populations. Exact, associative
    /// and commutative.
    pub fn merge(&self, other: &ScoreSet) -> Result<ScoreSet> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch(format!(
                "{:?} vs {:?}",
                self.config, other.config
            )));
        }
        let side = self.config.side;
        let mut tail = Vec::with_capacity(self.config.tail_capacity);
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.tail, &other.tail);
        while tail.len() < self.config.tail_capacity && (i < a.len() || j < b.len()) {
            let take_a = j >= b.len()
                || (i < a.len() && side.key(a[i]).total_cmp(&side.key(b[j])) != Ordering::Less);
            if take_a {
                tail.push(a[i]);
                i += 1;
            } else {
                tail.push(b[j]);
                j += 1;
            }
        }
        let histogram = self
            .histogram
            .iter()
            .zip(&other.histogram)
            .map(|(x, y)| x + y)
            .collect();
        Ok(ScoreSet {
            config: self.config,
            count: self.count + other.count,
            tail,
            histogram,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scores(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn sorted_extreme(mut v: Vec<f64>, side: TailSide, k: usize) -> Vec<f64> {
        match side {
            TailSide::High => v.sort_by(|a, b| b.total_cmp(a)),
            TailSide::Low => v.sort_by(|a, b| a.total_cmp(b)),
        }
        v.truncate(k);
        v
    }

    #[test]
    fn tail_matches_sort_oracle() {
        for side in [TailSide::High, TailSide::Low] {
            let v = scores(1, 5000);
            let cfg = SetConfig::new(side, 37).with_bins(1000);
            let set = ScoreSet::from_scores(cfg, v.iter().copied());
            assert_eq!(set.tail(), sorted_extreme(v.clone(), side, 37).as_slice());
            assert_eq!(set.count(), 5000);
            assert_eq!(set.histogram().iter().sum::<u64>(), 5000);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(set.min(), Some(lo));
        }
    }

    #[test]
    fn merged_tail_equals_tail_of_concatenation() {
        let (a, b) = (scores(2, 1000), scores(3, 1000));
        let cfg = SetConfig::new(TailSide::High, 25).with_bins(500);
        let sa = ScoreSet::from_scores(cfg, a.iter().copied());
        let sb = ScoreSet::from_scores(cfg, b.iter().copied());
        let merged = sa.merge(&sb).unwrap();
        let all: Vec<f64> = a.into_iter().chain(b).collect();
        assert_eq!(merged, ScoreSet::from_scores(cfg, all.iter().copied()));
        assert_eq!(merged.tail(), sorted_extreme(all, TailSide::High, 25).as_slice());
        assert_eq!(merged, sb.merge(&sa).unwrap());
    }

    #[test]
    fn empty_is_merge_identity() {
        let cfg = SetConfig::new(TailSide::Low, 10).with_bins(100);
        let x = ScoreSet::from_scores(cfg, scores(4, 50));
        assert_eq!(x.merge(&ScoreSet::empty(cfg)).unwrap(), x);
        assert_eq!(ScoreSet::empty(cfg).merge(&x).unwrap(), x);
        assert_eq!(ScoreSet::empty(cfg).min(), None);
    }

    #[test]
    fn config_mismatch_is_error() {
        let a = ScoreSet::empty(SetConfig::new(TailSide::Low, 10).with_bins(100));
        let b = ScoreSet::empty(SetConfig::new(TailSide::Low, 10).with_bins(200));
        assert!(matches!(a.merge(&b), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn binning_edges() {
        let cfg = SetConfig::new(TailSide::High, 0);
        assert_eq!(cfg.bin_of(-1.0), 0);
        assert_eq!(cfg.bin_of(1.0), DEFAULT_BINS - 1);
        assert_eq!(cfg.bin_of(0.0), DEFAULT_BINS / 2);
        assert_eq!(cfg.bin_of(-2.0), 0);
        let w = cfg.bin_width();
        for s in scores(5, 1000) {
            let b = cfg.bin_of(s);
            assert!(cfg.bin_lower(b) <= s + 1e-12 && s < cfg.bin_lower(b) + w + 1e-12);
        }
    }

    #[test]
    fn capacity_rule() {
        assert_eq!(tail_capacity(0, 0.001), 0);
        assert_eq!(tail_capacity(10, 1.0), 10);
        assert_eq!(tail_capacity(10_001, 0.001), 11);
        assert_eq!(tail_capacity(5, 2.0), 5);
    }

    #[test]
    fn mean_estimate_within_half_bin() {
        let v = scores(6, 2000);
        let cfg = SetConfig::new(TailSide::High, 1).with_bins(1000);
        let set = ScoreSet::from_scores(cfg, v.iter().copied());
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((set.mean_estimate().unwrap() - mean).abs() <= cfg.bin_width() / 2.0);
    }
}
