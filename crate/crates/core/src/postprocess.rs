//! Turning model probabilities into final labels.
//!
//! Rules run in a fixed order: entity gate, speed filter, geofence,
//! confidence threshold. A rule is recorded only when it changes the class,
//! so an empty rule list means the final class is the raw argmax.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classes::{ActivityClass, EntityClass, FinalClass};
use crate::cpd::ChangeReason;
use crate::ingest::AisMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    EntityGate,
    SpeedFilter,
    Geofence,
    ConfidenceThreshold,
}

#[derive(Debug, Error)]
pub enum PostProcessError {
    #[error("ring has {0} vertices, need at least 3")]
    DegenerateRing(usize),
    #[error("invalid geofence: {0}")]
    InvalidGeoFence(String),
    #[error("invalid post-processing config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} class probabilities, got {got}")]
    InvalidProbs { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let scale = ((b.0 - a.0).abs() + (b.1 - a.1).abs()).max(1.0);
    cross.abs() <= 1e-12 * scale
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

/// Even-odd test of `(lat, lon)` against a closed ring of `(lat, lon)`
/// vertices; points on an edge or vertex count as inside.
pub fn point_in_polygon(lat: f64, lon: f64, ring: &[(f64, f64)]) -> Result<bool, PostProcessError> {
    if ring.len() < 3 {
        return Err(PostProcessError::DegenerateRing(ring.len()));
    }
    let p = (lon, lat);
    let mut inside = false;
    for i in 0..ring.len() {
        let a = (ring[i].1, ring[i].0);
        let b = (ring[(i + 1) % ring.len()].1, ring[(i + 1) % ring.len()].0);
        if on_segment(p, a, b) {
            return Ok(true);
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    Ok(inside)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFence {
    pub name: String,
    /// `(lat, lon)` vertices; the closing edge back to the first is implicit.
    pub ring: Vec<(f64, f64)>,
    pub suppress: ActivityClass,
    pub replace: FinalClass,
}

impl GeoFence {
    pub fn new(
        name: impl Into<String>,
        ring: Vec<(f64, f64)>,
        suppress: ActivityClass,
        replace: FinalClass,
    ) -> Result<Self, PostProcessError> {
        let name = name.into();
        if ring.len() < 3 {
            return Err(PostProcessError::DegenerateRing(ring.len()));
        }
        if ring.iter().any(|&(lat, lon)| !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)) {
            return Err(PostProcessError::InvalidGeoFence(format!("{name}: vertex out of range")));
        }
        if replace == FinalClass::Activity(ActivityClass::Fishing) {
            return Err(PostProcessError::InvalidGeoFence(format!("{name}: fishing cannot be a replacement")));
        }
        if replace == FinalClass::Activity(suppress) {
            return Err(PostProcessError::InvalidGeoFence(format!("{name}: replacement equals suppressed class")));
        }
        Ok(Self { name, ring, suppress, replace })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        point_in_polygon(lat, lon, &self.ring).expect("ring validated on construction")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoFenceSet {
    pub fences: Vec<GeoFence>,
}

impl GeoFenceSet {
    /// Parse a GeoJSON `FeatureCollection` of `Polygon` features whose
    /// properties carry `suppress` and `replace` class names and an optional
    /// `name`. Coordinates are `[lon, lat]`; a repeated closing vertex is dropped.
    pub fn from_geojson(text: &str) -> Result<Self, PostProcessError> {
        let bad = |m: String| PostProcessError::InvalidGeoFence(m);
        let doc: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(bad("expected a FeatureCollection".into()));
        }
        let features = doc.get("features").and_then(Value::as_array).ok_or_else(|| bad("missing features".into()))?;
        let mut fences = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let name = props.get("name").and_then(Value::as_str).map_or_else(|| format!("fence-{i}"), str::to_string);
            let class_prop = |key: &str| -> Result<&str, PostProcessError> {
                props.get(key).and_then(Value::as_str).ok_or_else(|| bad(format!("{name}: missing `{key}`")))
            };
            let suppress: ActivityClass = class_prop("suppress")?.parse().map_err(|e| bad(format!("{name}: {e}")))?;
            let replace: FinalClass = class_prop("replace")?.parse().map_err(|e| bad(format!("{name}: {e}")))?;
            let geom = f.get("geometry").ok_or_else(|| bad(format!("{name}: missing geometry")))?;
            if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
                return Err(bad(format!("{name}: only Polygon geometries are supported")));
            }
            let rings = geom.get("coordinates").and_then(Value::as_array).ok_or_else(|| bad(format!("{name}: missing coordinates")))?;
            if rings.len() != 1 {
                return Err(bad(format!("{name}: polygons with holes are not supported")));
            }
            let mut ring = Vec::new();
            for pt in rings[0].as_array().ok_or_else(|| bad(format!("{name}: ring is not an array")))? {
                let lon = pt.get(0).and_then(Value::as_f64);
                let lat = pt.get(1).and_then(Value::as_f64);
                match (lat, lon) {
                    (Some(lat), Some(lon)) => ring.push((lat, lon)),
                    _ => return Err(bad(format!("{name}: bad coordinate {pt}"))),
                }
            }
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            fences.push(GeoFence::new(name, ring, suppress, replace)?);
        }
        Ok(Self { fences })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PostProcessError> {
        Self::from_geojson(&std::fs::read_to_string(path)?)
    }

    /// First fence containing the point that suppresses `class`.
    pub fn matching(&self, lat: f64, lon: f64, class: ActivityClass) -> Option<&GeoFence> {
        self.fences.iter().find(|f| f.suppress == class && f.contains(lat, lon))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcessConfig {
    pub confidence_threshold: f64,
    pub fishing_max_sog_kn: f64,
    #[serde(skip)]
    pub geofences: GeoFenceSet,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, fishing_max_sog_kn: 10.0, geofences: GeoFenceSet::default() }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<(), PostProcessError> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(PostProcessError::InvalidConfig("confidence_threshold must be in (0, 1]".into()));
        }
        if !(self.fishing_max_sog_kn > 0.0) {
            return Err(PostProcessError::InvalidConfig("fishing_max_sog_kn must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEvent {
    pub entity_id: String,
    pub timestamp: i64,
    /// Model probabilities in activity-class index order.
    pub probs: Vec<f64>,
    pub raw_class: ActivityClass,
    pub final_class: FinalClass,
    pub applied_rules: Vec<RuleId>,
    pub entity_class: EntityClass,
    pub changepoint_reason: Option<ChangeReason>,
    pub changepoint_detail: Option<String>,
}

fn argmax_excluding(p: &[f64], skip: Option<usize>) -> usize {
    let mut best = None;
    for (i, &v) in p.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Zero the fishing probability and rescale the rest to sum to one.
pub fn gate_fishing(probs: &[f64]) -> Vec<f64> {
    let f = ActivityClass::Fishing.index();
    let rest: f64 = probs.iter().enumerate().filter(|&(i, _)| i != f).map(|(_, &p)| p).sum();
    let n_rest = (probs.len() - 1) as f64;
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| match i {
            _ if i == f => 0.0,
            _ if rest > 0.0 => p / rest,
            _ => 1.0 / n_rest,
        })
        .collect()
}

pub fn apply_postprocess(
    probs: &[f64],
    msg: &AisMessage,
    entity: EntityClass,
    cfg: &PostProcessConfig,
) -> Result<ClassificationEvent, PostProcessError> {
    let n = ActivityClass::ALL.len();
    if probs.len() != n {
        return Err(PostProcessError::InvalidProbs { expected: n, got: probs.len() });
    }
    let fishing = ActivityClass::Fishing.index();
    let raw = ActivityClass::ALL[argmax_excluding(probs, None)];
    let mut rules = Vec::new();
    let mut p = probs.to_vec();
    let mut class = raw;

    if entity != EntityClass::Vessel {
        p = gate_fishing(&p);
        let gated = ActivityClass::ALL[argmax_excluding(&p, Some(fishing))];
        if gated != class {
            class = gated;
            rules.push(RuleId::EntityGate);
        }
    }
    if class == ActivityClass::Fishing && msg.sog > cfg.fishing_max_sog_kn {
        class = ActivityClass::ALL[argmax_excluding(&p, Some(fishing))];
        rules.push(RuleId::SpeedFilter);
    }
    let mut final_class = FinalClass::Activity(class);
    if let Some(fence) = cfg.geofences.matching(msg.lat, msg.lon, class) {
        final_class = fence.replace;
        rules.push(RuleId::Geofence);
    }
    let top = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top < cfg.confidence_threshold && final_class != FinalClass::UNKNOWN {
        final_class = FinalClass::UNKNOWN;
        rules.push(RuleId::ConfidenceThreshold);
    }

    Ok(ClassificationEvent {
        entity_id: msg.entity_id.clone(),
        timestamp: msg.timestamp,
        probs: probs.to_vec(),
        raw_class: raw,
        final_class,
        applied_rules: rules,
        entity_class: entity,
        changepoint_reason: None,
        changepoint_detail: None,
    })
}
