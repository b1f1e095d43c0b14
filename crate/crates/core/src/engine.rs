//! Per-message streaming pipeline.
//!
//! store -> change-point check -> window -> features -> model -> post-process.
//! Only a fired change point runs inference, so every event maps to exactly
//! one change point.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ActivityClass, EntityClass};
use crate::cpd::{detect_changepoint, CpdConfig};
use crate::features::{build_features, FeatureError};
use crate::ingest::{normalize_message, parse_line, AisMessage, LineFormat, NormalizeConfig};
use crate::metrics::{Metrics, MetricsSnapshot};
use crate::model::{forward, softmax, Checkpoint, ModelError};
use crate::postprocess::{apply_postprocess, ClassificationEvent, PostProcessConfig};
use crate::trackstore::{AppendOutcome, StoreConfig, TrackStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A checkpoint ready for inference on raw message windows.
#[derive(Debug, Clone)]
pub struct Classifier {
    ckpt: Checkpoint,
}

impl Classifier {
    pub fn new(ckpt: Checkpoint) -> Self {
        Self { ckpt }
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn classes(&self) -> &[String] {
        &self.ckpt.classes
    }

    /// Class probabilities for the newest message, using at most the
    /// model's maximum sequence length of trailing messages.
    pub fn probabilities(&self, window: &[AisMessage]) -> Result<Vec<f64>, PipelineError> {
        let start = window.len().saturating_sub(self.ckpt.model.max_seq_len);
        let x = build_features(&window[start..], &self.ckpt.features)?;
        let logits = forward(&self.ckpt.model, &self.ckpt.weights, &x.rows)?;
        Ok(softmax(logits.view()).to_vec())
    }

    pub fn predict(&self, window: &[AisMessage]) -> Result<usize, PipelineError> {
        let p = self.probabilities(window)?;
        Ok(p.iter().enumerate().fold(0, |b, (i, &v)| if v > p[b] { i } else { b }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Store,
    Cpd,
    Features,
    Model,
    Postprocess,
}

/// A message the pipeline could not process, kept instead of halting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub stage: Stage,
    pub error: String,
    pub entity_id: Option<String>,
    pub timestamp: Option<i64>,
    pub line: Option<String>,
}

impl DeadLetter {
    fn for_message(stage: Stage, msg: &AisMessage, error: impl ToString) -> Self {
        Self {
            stage,
            error: error.to_string(),
            entity_id: Some(msg.entity_id.clone()),
            timestamp: Some(msg.timestamp),
            line: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub store: StoreConfig,
    pub cpd: CpdConfig,
    pub postprocess: PostProcessConfig,
    pub normalize: NormalizeConfig,
    /// Stored messages needed before the entity model is consulted.
    pub entity_min_context: usize,
    /// History growth that triggers a fresh entity verdict.
    pub entity_refresh_increment: usize,
    pub metrics_window_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            store: StoreConfig::default(),
            cpd: CpdConfig::default(),
            postprocess: PostProcessConfig::default(),
            normalize: NormalizeConfig::default(),
            entity_min_context: 500,
            entity_refresh_increment: 500,
            metrics_window_s: 60.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |e: String| EngineError::InvalidConfig(e);
        self.cpd.validate().map_err(|e| bad(e.to_string()))?;
        self.postprocess.validate().map_err(|e| bad(e.to_string()))?;
        if self.entity_min_context == 0 || self.entity_refresh_increment == 0 {
            return Err(bad("entity_min_context and entity_refresh_increment must be at least 1".into()));
        }
        if self.store.max_window_len == 0 || self.store.window_span_s <= 0 || self.store.retention_cap == 0 {
            return Err(bad("store bounds must be positive".into()));
        }
        if !(self.metrics_window_s > 0.0) {
            return Err(bad("metrics_window_s must be positive".into()));
        }
        Ok(())
    }

    pub fn new_metrics(&self) -> Arc<Metrics> {
        Arc::new(Metrics::new(Duration::from_secs_f64(self.metrics_window_s)))
    }
}

#[derive(Debug, Default)]
struct EntityState {
    last_changepoint: Option<i64>,
    tail: Option<AisMessage>,
    /// Verdict and the history length it was computed at.
    verdict: Option<(EntityClass, usize)>,
}

pub struct Engine {
    cfg: EngineConfig,
    activity: Arc<Classifier>,
    entity: Option<Arc<Classifier>>,
    store: TrackStore,
    states: HashMap<String, EntityState>,
    metrics: Arc<Metrics>,
}

impl Engine {
    pub fn new(
        cfg: EngineConfig,
        activity: Arc<Classifier>,
        entity: Option<Arc<Classifier>>,
        metrics: Arc<Metrics>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        if activity.classes() != ActivityClass::names().as_slice() {
            return Err(EngineError::InvalidConfig(format!(
                "activity checkpoint classes {:?} do not match {:?}",
                activity.classes(),
                ActivityClass::names()
            )));
        }
        if let Some(e) = &entity {
            if e.classes() != EntityClass::names().as_slice() {
                return Err(EngineError::InvalidConfig(format!(
                    "entity checkpoint classes {:?} do not match {:?}",
                    e.classes(),
                    EntityClass::names()
                )));
            }
        }
        let store = TrackStore::new(cfg.store);
        Ok(Self { cfg, activity, entity, store, states: HashMap::new(), metrics })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn metrics(&self) -> &Arc<Metrics> {
        &self.metrics
    }

    pub fn metrics_snapshot(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    pub fn history_len(&self, entity_id: &str) -> usize {
        self.store.history_len(entity_id)
    }

    pub fn store_mut(&mut self) -> &mut TrackStore {
        &mut self.store
    }

    /// Last computed entity verdict, if any.
    pub fn cached_entity(&self, entity_id: &str) -> Option<EntityClass> {
        self.states.get(entity_id).and_then(|s| s.verdict).map(|(c, _)| c)
    }

    /// Parse a CSV or JSON line and run it through the pipeline.
    pub fn on_line(&mut self, line: &str, format: LineFormat) -> Result<Option<ClassificationEvent>, DeadLetter> {
        match parse_line(line, format) {
            Ok(msg) => self.on_message(msg),
            Err(e) => {
                self.metrics.message_ingested();
                self.metrics.dead_letter();
                Err(DeadLetter { stage: Stage::Parse, error: e.to_string(), entity_id: None, timestamp: None, line: Some(line.to_string()) })
            }
        }
    }

    pub fn on_message(&mut self, msg: AisMessage) -> Result<Option<ClassificationEvent>, DeadLetter> {
        self.metrics.message_ingested();
        let result = self.process(msg);
        if result.is_err() {
            self.metrics.dead_letter();
        }
        result
    }

    fn process(&mut self, msg: AisMessage) -> Result<Option<ClassificationEvent>, DeadLetter> {
        let msg = normalize_message(&msg, &self.cfg.normalize).message;
        let id = msg.entity_id.clone();
        match self.store.append(&id, msg.clone()) {
            AppendOutcome::Duplicate => {
                self.metrics.duplicate();
                return Ok(None);
            }
            AppendOutcome::Expired => {
                return Err(DeadLetter::for_message(Stage::Store, &msg, "older than the retention horizon"));
            }
            AppendOutcome::Stored { at_tail } => {
                self.metrics.message_stored();
                if !at_tail {
                    return Ok(None);
                }
            }
        }

        let state = self.states.entry(id.clone()).or_default();
        let prev_tail = state.tail.replace(msg.clone());
        let window = self.store.window_slice(&id).map_err(|e| DeadLetter::for_message(Stage::Store, &msg, e))?;
        let seg_start = state.last_changepoint.map_or(0, |ts| window.partition_point(|m| m.timestamp < ts));
        let segment = &window[seg_start..];
        let decision = match prev_tail {
            // the previous report fell out of the window; keep the gap visible
            Some(prev) if segment.len() == 1 && prev.timestamp < msg.timestamp => {
                detect_changepoint(&[prev, msg.clone()], &self.cfg.cpd)
            }
            _ => detect_changepoint(segment, &self.cfg.cpd),
        }
        .map_err(|e| DeadLetter::for_message(Stage::Cpd, &msg, e))?;
        if !decision.is_changepoint {
            return Ok(None);
        }
        state.last_changepoint = Some(msg.timestamp);
        self.metrics.changepoint();

        let entity = self.entity_for_gating(&id);
        let window = self.store.window_slice(&id).map_err(|e| DeadLetter::for_message(Stage::Store, &msg, e))?;
        let probs = self.activity.probabilities(window).map_err(|e| {
            let stage = match e {
                PipelineError::Features(_) => Stage::Features,
                PipelineError::Model(_) => Stage::Model,
            };
            DeadLetter::for_message(stage, &msg, e)
        })?;
        let mut event = apply_postprocess(&probs, &msg, entity, &self.cfg.postprocess)
            .map_err(|e| DeadLetter::for_message(Stage::Postprocess, &msg, e))?;
        event.changepoint_reason = Some(decision.reason);
        event.changepoint_detail = Some(decision.detail);
        self.metrics.classification(event.final_class);
        Ok(Some(event))
    }

    fn entity_for_gating(&mut self, entity_id: &str) -> EntityClass {
        let len = self.store.history_len(entity_id);
        let min = self.cfg.entity_min_context;
        let stale = match self.states.get(entity_id).and_then(|s| s.verdict) {
            None => true,
            Some((_, at)) if at < min => len >= min,
            Some((_, at)) => len >= at + self.cfg.entity_refresh_increment,
        };
        if stale {
            self.classify_entity(entity_id)
        } else {
            self.cached_entity(entity_id).unwrap_or(EntityClass::Unknown)
        }
    }

    /// Recompute and cache the entity verdict from the stored history.
    /// Unknown below the minimum context or without an entity model.
    pub fn classify_entity(&mut self, entity_id: &str) -> EntityClass {
        let len = self.store.history_len(entity_id);
        let verdict = match &self.entity {
            Some(model) if len >= self.cfg.entity_min_context => self
                .store
                .window_slice(entity_id)
                .ok()
                .and_then(|w| model.predict(w).ok())
                .and_then(EntityClass::from_index)
                .unwrap_or(EntityClass::Unknown),
            _ => EntityClass::Unknown,
        };
        self.states.entry(entity_id.to_string()).or_default().verdict = Some((verdict, len));
        verdict
    }
}
