//! Running counters and sliding-window classification rates.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::classes::{ActivityClass, FinalClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub messages_ingested: u64,
    pub messages_stored: u64,
    pub duplicates: u64,
    pub dead_letters: u64,
    pub changepoints: u64,
    pub classifications_total: u64,
    /// Final-class counts since start, including `unknown`.
    pub classifications_by_class: BTreeMap<String, u64>,
    /// Final-class rates per second over the trailing window.
    pub rates_per_s: BTreeMap<String, f64>,
    pub rate_window_s: f64,
    pub uptime_s: f64,
}

#[derive(Debug)]
struct Inner {
    started: Instant,
    messages_ingested: u64,
    messages_stored: u64,
    duplicates: u64,
    dead_letters: u64,
    changepoints: u64,
    by_class: BTreeMap<String, u64>,
    recent: VecDeque<(Instant, FinalClass)>,
}

/// Thread-safe accumulator shared by every engine shard.
#[derive(Debug)]
pub struct Metrics {
    window: Duration,
    inner: Mutex<Inner>,
}

fn class_names() -> impl Iterator<Item = &'static str> {
    ActivityClass::ALL.iter().map(|c| c.name()).chain(std::iter::once(FinalClass::UNKNOWN.name()))
}

impl Metrics {
    pub fn new(window: Duration) -> Self {
        Self {
            window,
            inner: Mutex::new(Inner {
                started: Instant::now(),
                messages_ingested: 0,
                messages_stored: 0,
                duplicates: 0,
                dead_letters: 0,
                changepoints: 0,
                by_class: class_names().map(|n| (n.to_string(), 0)).collect(),
                recent: VecDeque::new(),
            }),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&mut Inner) -> R) -> R {
        f(&mut self.inner.lock().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn message_ingested(&self) {
        self.with(|m| m.messages_ingested += 1);
    }

    pub fn message_stored(&self) {
        self.with(|m| m.messages_stored += 1);
    }

    pub fn duplicate(&self) {
        self.with(|m| m.duplicates += 1);
    }

    pub fn dead_letter(&self) {
        self.with(|m| m.dead_letters += 1);
    }

    pub fn changepoint(&self) {
        self.with(|m| m.changepoints += 1);
    }

    pub fn classification(&self, class: FinalClass) {
        self.classification_at(class, Instant::now());
    }

    pub fn classification_at(&self, class: FinalClass, now: Instant) {
        let window = self.window;
        self.with(|m| {
            *m.by_class.entry(class.name().to_string()).or_default() += 1;
            m.recent.push_back((now, class));
            while m.recent.front().is_some_and(|(t, _)| now.duration_since(*t) > window) {
                m.recent.pop_front();
            }
        });
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        self.snapshot_at(Instant::now())
    }

    pub fn snapshot_at(&self, now: Instant) -> MetricsSnapshot {
        let window = self.window;
        self.with(|m| {
            let mut rates: BTreeMap<String, f64> = class_names().map(|n| (n.to_string(), 0.0)).collect();
            let secs = window.as_secs_f64();
            for (t, c) in &m.recent {
                if now.saturating_duration_since(*t) <= window {
                    *rates.entry(c.name().to_string()).or_default() += 1.0 / secs;
                }
            }
            MetricsSnapshot {
                messages_ingested: m.messages_ingested,
                messages_stored: m.messages_stored,
                duplicates: m.duplicates,
                dead_letters: m.dead_letters,
                changepoints: m.changepoints,
                classifications_total: m.by_class.values().sum(),
                classifications_by_class: m.by_class.clone(),
                rates_per_s: rates,
                rate_window_s: secs,
                uptime_s: now.saturating_duration_since(m.started).as_secs_f64(),
            }
        })
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_metrics_are_zero() {
        let s = Metrics::default().snapshot();
        assert_eq!(s.messages_ingested, 0);
        assert_eq!(s.classifications_total, 0);
        assert_eq!(s.classifications_by_class.len(), 6);
        assert!(s.classifications_by_class.values().all(|&v| v == 0));
        assert!(s.rates_per_s.values().all(|&v| v == 0.0));
    }

    #[test]
    fn counts_partition_total() {
        let m = Metrics::default();
        let classes = [FinalClass::from(ActivityClass::Fishing), FinalClass::UNKNOWN, FinalClass::from(ActivityClass::Moored)];
        for i in 0..10 {
            m.classification(classes[i % 3]);
        }
        let s = m.snapshot();
        assert_eq!(s.classifications_total, 10);
        assert_eq!(s.classifications_by_class.values().sum::<u64>(), 10);
        assert_eq!(s.classifications_by_class["fishing"], 4);
        assert!((s.rates_per_s["unknown"] - 3.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn rates_forget_old_events() {
        let m = Metrics::new(Duration::from_secs(10));
        let t0 = Instant::now();
        m.classification_at(FinalClass::from(ActivityClass::Anchored), t0);
        m.classification_at(FinalClass::from(ActivityClass::Anchored), t0 + Duration::from_secs(8));
        let s = m.snapshot_at(t0 + Duration::from_secs(12));
        assert!((s.rates_per_s["anchored"] - 0.1).abs() < 1e-12);
        assert_eq!(s.classifications_by_class["anchored"], 2);
    }
}
