//! Per-entity message history and bounded inference windows.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AisMessage;

pub const MAX_WINDOW_LEN: usize = 2048;
pub const MAX_WINDOW_SPAN_S: i64 = 30 * 24 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub max_window_len: usize,
    pub window_span_s: i64,
    /// Messages older than this relative to the newest are evicted.
    pub retention_s: i64,
    /// Hard cap on retained messages per entity, oldest dropped first.
    pub retention_cap: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            max_window_len: MAX_WINDOW_LEN,
            window_span_s: MAX_WINDOW_SPAN_S,
            retention_s: MAX_WINDOW_SPAN_S,
            retention_cap: 16_384,
        }
    }
}

/// Time-ordered, bounded slice of one entity's messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackWindow {
    pub entity_id: String,
    pub messages: Vec<AisMessage>,
    pub assembled_at: i64,
}

impl TrackWindow {
    pub fn new(entity_id: impl Into<String>, messages: Vec<AisMessage>) -> Self {
        let assembled_at = messages.last().map_or(0, |m| m.timestamp);
        Self { entity_id: entity_id.into(), messages, assembled_at }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn span_s(&self) -> i64 {
        match (self.messages.first(), self.messages.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    /// Inserted; `at_tail` is false for late arrivals placed before newer messages.
    Stored { at_tail: bool },
    /// Exact duplicate of a retained message.
    Duplicate,
    /// Older than the retention horizon relative to the newest message.
    Expired,
}

impl AppendOutcome {
    pub fn is_stored(self) -> bool {
        matches!(self, AppendOutcome::Stored { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no history for entity `{0}`")]
    UnknownEntity(String),
}

#[derive(Debug, Default)]
pub struct TrackStore {
    cfg: StoreConfig,
    tracks: HashMap<String, VecDeque<AisMessage>>,
}

fn same_report(a: &AisMessage, b: &AisMessage) -> bool {
    a.timestamp == b.timestamp && a.lat == b.lat && a.lon == b.lon && a.sog == b.sog && a.cog == b.cog
}

impl TrackStore {
    pub fn new(cfg: StoreConfig) -> Self {
        Self { cfg, tracks: HashMap::new() }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.cfg
    }

    /// Insert in timestamp order (ties keep arrival order), drop exact
    /// duplicates, then evict everything older than the horizon.
    pub fn append(&mut self, entity_id: &str, msg: AisMessage) -> AppendOutcome {
        let track = self.tracks.entry(entity_id.to_string()).or_default();
        if let Some(newest) = track.back() {
            if msg.timestamp < newest.timestamp - self.cfg.retention_s {
                return AppendOutcome::Expired;
            }
        }
        let pos = track.partition_point(|m| m.timestamp <= msg.timestamp);
        let dup = track.range(..pos).rev().take_while(|m| m.timestamp == msg.timestamp).any(|m| same_report(m, &msg));
        if dup {
            return AppendOutcome::Duplicate;
        }
        let at_tail = pos == track.len();
        track.insert(pos, msg);

        let newest = track.back().map(|m| m.timestamp).unwrap_or_default();
        while track.front().is_some_and(|m| m.timestamp < newest - self.cfg.retention_s) {
            track.pop_front();
        }
        while track.len() > self.cfg.retention_cap {
            track.pop_front();
        }
        AppendOutcome::Stored { at_tail }
    }

    pub fn history_len(&self, entity_id: &str) -> usize {
        self.tracks.get(entity_id).map_or(0, VecDeque::len)
    }

    /// Borrow the most recent messages satisfying both window bounds.
    pub fn window_slice(&mut self, entity_id: &str) -> Result<&[AisMessage], StoreError> {
        let cfg = self.cfg;
        let track = self
            .tracks
            .get_mut(entity_id)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| StoreError::UnknownEntity(entity_id.to_string()))?;
        let all = track.make_contiguous();
        let newest = all[all.len() - 1].timestamp;
        let by_count = all.len().saturating_sub(cfg.max_window_len);
        let by_span = all.partition_point(|m| m.timestamp < newest - cfg.window_span_s);
        Ok(&all[by_count.max(by_span)..])
    }

    pub fn assemble_window(&mut self, entity_id: &str) -> Result<TrackWindow, StoreError> {
        let messages = self.window_slice(entity_id)?.to_vec();
        Ok(TrackWindow::new(entity_id, messages))
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.tracks.keys().map(String::as_str)
    }

    pub fn remove(&mut self, entity_id: &str) -> Option<Vec<AisMessage>> {
        self.tracks.remove(entity_id).map(Vec::from)
    }
}
