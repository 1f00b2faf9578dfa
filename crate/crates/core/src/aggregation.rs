//! Windowed aggregation of sensor samples.
//!
//! Raw samples stay node-local; only window means are written to the store,
//! as grow-only set elements tagged with `(node, epoch, window)` so a re-run
//! of the producing task re-adds identical elements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crdt::{CrdtType, Delta, MutatorOp, NodeId};
use crate::runtime::Millis;
use crate::store::{Store, StoreError, StoreKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggError {
    #[error("sample {0} is not finite")]
    NonFinite(f64),
    #[error("window capacity must be >= 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub at: Millis,
}

/// Extra statistics, only computed when enabled on the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlushedMean {
    /// Per-window sequence number, starting at 0.
    pub window: u64,
    pub mean: f64,
    pub samples: Vec<Sample>,
    pub stats: Option<Stats>,
}

#[derive(Debug, Clone)]
pub struct AggWindow {
    key: StoreKey,
    capacity: usize,
    delta_interval: Millis,
    samples: Vec<Sample>,
    mean: f64,
    next_window: u64,
    stats: bool,
}

impl AggWindow {
    pub fn new(key: StoreKey, capacity: usize, delta_interval: Millis) -> Result<Self, AggError> {
        if capacity == 0 {
            return Err(AggError::ZeroCapacity);
        }
        Ok(Self {
            key,
            capacity,
            delta_interval,
            samples: Vec::with_capacity(capacity),
            mean: 0.0,
            next_window: 0,
            stats: false,
        })
    }

    pub fn with_stats(mut self, on: bool) -> Self {
        self.stats = on;
        self
    }

    pub fn key(&self) -> &StoreKey {
        &self.key
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn delta_interval(&self) -> Millis {
        self.delta_interval
    }

    pub fn buffered(&self) -> &[Sample] {
        &self.samples
    }

    pub fn windows_flushed(&self) -> u64 {
        self.next_window
    }

    /// Appends a sample; returns the window mean once `capacity` samples
    /// have accumulated.
    pub fn record_sample(&mut self, value: f64, at: Millis) -> Result<Option<FlushedMean>, AggError> {
        if !value.is_finite() {
            return Err(AggError::NonFinite(value));
        }
        self.samples.push(Sample { value, at });
        let n = self.samples.len() as f64;
        self.mean += (value - self.mean) / n;
        if self.samples.len() < self.capacity {
            return Ok(None);
        }
        let samples = std::mem::take(&mut self.samples);
        let mean = std::mem::replace(&mut self.mean, 0.0);
        let stats = self.stats.then(|| {
            let (min, max) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.value), hi.max(s.value)));
            let variance = samples.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / n;
            Stats { min, max, variance }
        });
        let window = self.next_window;
        self.next_window += 1;
        Ok(Some(FlushedMean {
            window,
            mean,
            samples,
            stats,
        }))
    }
}

/// Canonical set element for a propagated mean.
pub fn mean_element(node: NodeId, epoch: u32, flushed: &FlushedMean) -> Vec<u8> {
    let mut v = serde_json::json!({
        "node": node.raw(),
        "epoch": epoch,
        "window": flushed.window,
        "mean": flushed.mean,
    });
    if let Some(s) = flushed.stats {
        v["stats"] = serde_json::to_value(s).expect("stats serialize");
    }
    v.to_string().into_bytes()
}

/// Adds the mean to the window's grow-only set and returns the delta to
/// replicate.
pub fn propagate_mean(
    store: &mut Store,
    key: &StoreKey,
    node: NodeId,
    epoch: u32,
    flushed: &FlushedMean,
) -> Result<Delta, StoreError> {
    debug_assert_eq!(key.ty, CrdtType::GSet);
    let (_, delta) = store.update(key, &MutatorOp::Add(mean_element(node, epoch, flushed)), node)?;
    Ok(delta)
}

/// Mean propagation filter: a flush is only written to the store when it
/// moved at least `threshold` away from the last propagated mean.
#[derive(Debug, Clone, Default)]
pub struct ChangeFilter {
    threshold: f64,
    last: Option<f64>,
}

impl ChangeFilter {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, last: None }
    }

    pub fn admit(&mut self, mean: f64) -> bool {
        let pass = match self.last {
            None => true,
            Some(prev) => (mean - prev).abs() >= self.threshold,
        };
        if pass {
            self.last = Some(mean);
        }
        pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::QueryResult;

    fn window(k: usize) -> AggWindow {
        AggWindow::new(StoreKey::new("result/t/means", CrdtType::GSet), k, 1000).unwrap()
    }

    #[test]
    fn flushes_mean_at_capacity() {
        let mut w = window(4);
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            assert_eq!(w.record_sample(v, i as u64).unwrap(), None);
        }
        let f = w.record_sample(4.0, 3).unwrap().unwrap();
        assert_eq!(f.mean, 2.5);
        assert_eq!(f.window, 0);
        assert!(w.buffered().is_empty());
    }

    #[test]
    fn rejects_non_finite_and_zero_capacity() {
        let mut w = window(2);
        assert!(w.record_sample(f64::NAN, 0).is_err());
        assert!(w.record_sample(f64::INFINITY, 0).is_err());
        assert!(w.buffered().is_empty());
        assert_eq!(
            AggWindow::new(StoreKey::new("k", CrdtType::GSet), 0, 1).unwrap_err(),
            AggError::ZeroCapacity
        );
    }

    #[test]
    fn stats_when_enabled() {
        let mut w = window(2).with_stats(true);
        w.record_sample(1.0, 0).unwrap();
        let f = w.record_sample(3.0, 1).unwrap().unwrap();
        assert_eq!(
            f.stats,
            Some(Stats {
                min: 1.0,
                max: 3.0,
                variance: 1.0
            })
        );
    }

    #[test]
    fn repropagation_is_idempotent_and_tags_distinguish_nodes() {
        let key = StoreKey::new("result/t/means", CrdtType::GSet);
        let mut w = window(1);
        let f = w.record_sample(20.0, 0).unwrap().unwrap();
        let mut store = Store::new();
        propagate_mean(&mut store, &key, NodeId(1), 0, &f).unwrap();
        propagate_mean(&mut store, &key, NodeId(1), 0, &f).unwrap();
        propagate_mean(&mut store, &key, NodeId(2), 0, &f).unwrap();
        match store.read("result/t/means", None).unwrap() {
            QueryResult::Set(s) => assert_eq!(s.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn change_filter() {
        let mut f = ChangeFilter::new(0.5);
        assert!(f.admit(10.0));
        assert!(!f.admit(10.2));
        assert!(f.admit(10.6));
        assert!(ChangeFilter::new(0.0).admit(1.0));
    }
}
