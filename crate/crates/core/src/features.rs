//! Per-message input rows for the model.
//!
//! Each row holds the point kinematics (scaled SOG, course as a sin/cos pair,
//! local solar time of day) followed by, for each anchor offset `j = 1..=n`,
//! the scaled time difference, scaled great-circle distance and normalized
//! course change between message `i` and message `i - j`. Offsets reaching
//! past the start of the window clamp to the first message. Irregular gaps
//! are kept as-is; nothing is interpolated.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{course_delta_deg, haversine_m};
use crate::ingest::AisMessage;

pub use crate::geo::haversine_m as haversine;

/// Number of point (non-anchor) columns.
pub const POINT_COLUMNS: usize = 4;
/// Columns contributed per anchor offset.
pub const ANCHOR_COLUMNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_anchor: usize,
    pub distance_scale_m: f64,
    pub time_scale_s: f64,
    pub sog_scale_kn: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_anchor: 9, distance_scale_m: 1_000.0, time_scale_s: 3_600.0, sog_scale_kn: 25.0 }
    }
}

impl FeatureConfig {
    pub fn width(&self) -> usize {
        POINT_COLUMNS + ANCHOR_COLUMNS * self.n_anchor
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.n_anchor > 0 && self.distance_scale_m > 0.0 && self.time_scale_s > 0.0 && self.sog_scale_kn > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::InvalidConfig)
        }
    }

    /// Ordered column names.
    pub fn layout(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["sog", "cog_sin", "cog_cos", "time_of_day"].iter().map(|s| s.to_string()).collect();
        for j in 1..=self.n_anchor {
            cols.push(format!("dt_{j}"));
            cols.push(format!("dist_{j}"));
            cols.push(format!("dcog_{j}"));
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("cannot build features for an empty window")]
    EmptyWindow,
    #[error("feature config scales and anchor count must be positive")]
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `L x F`.
    pub rows: Array2<f64>,
    pub layout: Vec<String>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|c| c == name)
    }
}

/// `(sin, cos)` of the course in radians.
pub fn encode_course(cog_deg: f64) -> (f64, f64) {
    cog_deg.to_radians().sin_cos()
}

/// Fraction of the local solar day, using longitude for the offset from UTC.
fn solar_time_of_day(timestamp: i64, lon: f64) -> f64 {
    let local = timestamp as f64 + lon / 15.0 * 3600.0;
    local.rem_euclid(86_400.0) / 86_400.0
}

pub fn build_features(window: &[AisMessage], cfg: &FeatureConfig) -> Result<FeatureSequence, FeatureError> {
    if window.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    cfg.validate()?;
    let len = window.len();
    let mut rows = Array2::<f64>::zeros((len, cfg.width()));
    for (i, m) in window.iter().enumerate() {
        let mut row = rows.row_mut(i);
        let (s, c) = encode_course(m.cog);
        row[0] = m.sog / cfg.sog_scale_kn;
        row[1] = s;
        row[2] = c;
        row[3] = solar_time_of_day(m.timestamp, m.lon);
        for j in 1..=cfg.n_anchor {
            let a = &window[i.saturating_sub(j)];
            let base = POINT_COLUMNS + ANCHOR_COLUMNS * (j - 1);
            row[base] = (m.timestamp - a.timestamp) as f64 / cfg.time_scale_s;
            row[base + 1] = haversine_m((m.lat, m.lon), (a.lat, a.lon)) / cfg.distance_scale_m;
            row[base + 2] = course_delta_deg(a.cog, m.cog) / 180.0;
        }
    }
    Ok(FeatureSequence { rows, layout: cfg.layout() })
}
