//! Speed- and time-based change-point detection.
//!
//! Two signals, checked against the most recent message (the last element):
//!
//! 1. a silent gap between the last two messages longer than
//!    `time_gap_threshold_s`;
//! 2. a shift between the mean SOG of the newest `sog_window_k` messages and
//!    the mean SOG of the `sog_window_k` before them larger than
//!    `sog_shift_threshold_kn`.
//!
//! The gap check wins when both fire.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AisMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeReason {
    TimeGap,
    SogShift,
    None,
}

impl fmt::Display for ChangeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeReason::TimeGap => "time_gap",
            ChangeReason::SogShift => "sog_shift",
            ChangeReason::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointDecision {
    pub is_changepoint: bool,
    pub reason: ChangeReason,
    pub detail: String,
}

impl ChangePointDecision {
    fn none(detail: String) -> Self {
        Self { is_changepoint: false, reason: ChangeReason::None, detail }
    }

    fn fired(reason: ChangeReason, detail: String) -> Self {
        Self { is_changepoint: true, reason, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdConfig {
    pub time_gap_threshold_s: i64,
    pub sog_window_k: usize,
    pub sog_shift_threshold_kn: f64,
    pub min_messages: usize,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self { time_gap_threshold_s: 6 * 3600, sog_window_k: 5, sog_shift_threshold_kn: 1.0, min_messages: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CpdError {
    #[error("change-point detection on an empty window")]
    EmptyWindow,
    #[error("invalid change-point config: {0}")]
    InvalidConfig(&'static str),
}

impl CpdConfig {
    pub fn validate(&self) -> Result<(), CpdError> {
        if self.time_gap_threshold_s <= 0 {
            return Err(CpdError::InvalidConfig("time_gap_threshold_s must be positive"));
        }
        if self.sog_window_k == 0 {
            return Err(CpdError::InvalidConfig("sog_window_k must be at least 1"));
        }
        if !(self.sog_shift_threshold_kn > 0.0) {
            return Err(CpdError::InvalidConfig("sog_shift_threshold_kn must be positive"));
        }
        if self.min_messages == 0 {
            return Err(CpdError::InvalidConfig("min_messages must be positive"));
        }
        Ok(())
    }

    /// Length below which the SOG check cannot run: both halves must be full.
    pub fn sog_check_min_len(&self) -> usize {
        self.min_messages.max(2 * self.sog_window_k)
    }
}

fn mean_sog(msgs: &[AisMessage]) -> f64 {
    msgs.iter().map(|m| m.sog).sum::<f64>() / msgs.len() as f64
}

/// Decide whether the last message of `window` is a change point.
///
/// `window` must be sorted by timestamp.
pub fn detect_changepoint(window: &[AisMessage], cfg: &CpdConfig) -> Result<ChangePointDecision, CpdError> {
    let n = window.len();
    if n == 0 {
        return Err(CpdError::EmptyWindow);
    }
    if n >= 2 {
        let gap = window[n - 1].timestamp - window[n - 2].timestamp;
        if gap > cfg.time_gap_threshold_s {
            return Ok(ChangePointDecision::fired(
                ChangeReason::TimeGap,
                format!("gap of {gap} s since previous message exceeds {} s", cfg.time_gap_threshold_s),
            ));
        }
    }
    let k = cfg.sog_window_k;
    if n < cfg.sog_check_min_len() {
        return Ok(ChangePointDecision::none(format!(
            "{n} messages, fewer than {} needed for the SOG check",
            cfg.sog_check_min_len()
        )));
    }
    let recent = mean_sog(&window[n - k..]);
    let prior = mean_sog(&window[n - 2 * k..n - k]);
    let shift = (recent - prior).abs();
    if shift > cfg.sog_shift_threshold_kn {
        return Ok(ChangePointDecision::fired(
            ChangeReason::SogShift,
            format!(
                "mean SOG moved from {prior:.2} kn to {recent:.2} kn over the last {k} messages (|shift| {shift:.2} > {} kn)",
                cfg.sog_shift_threshold_kn
            ),
        ));
    }
    Ok(ChangePointDecision::none(format!("mean SOG shift {shift:.2} kn within {} kn", cfg.sog_shift_threshold_kn)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T0: i64 = 1_700_000_000;

    fn track(points: &[(i64, f64)]) -> Vec<AisMessage> {
        points
            .iter()
            .map(|&(t, sog)| AisMessage {
                entity_id: "e".into(),
                timestamp: t,
                lat: 0.0,
                lon: 0.0,
                sog,
                cog: 0.0,
                vessel_type: None,
            })
            .collect()
    }

    #[test]
    fn stationary_input_is_quiet() {
        let w = track(&(0..20).map(|i| (T0 + 60 * i, 12.0)).collect::<Vec<_>>());
        let d = detect_changepoint(&w, &CpdConfig::default()).unwrap();
        assert!(!d.is_changepoint);
        assert_eq!(d.reason, ChangeReason::None);
    }

    #[test]
    fn long_gap_fires_time_gap() {
        let mut pts: Vec<_> = (0..5).map(|i| (T0 + 60 * i, 12.0)).collect();
        pts.push((T0 + 240 + 25_200, 12.0));
        let d = detect_changepoint(&track(&pts), &CpdConfig::default()).unwrap();
        assert_eq!(d.reason, ChangeReason::TimeGap);
        assert!(d.is_changepoint);
        assert!(!d.detail.is_empty());
    }

    #[test]
    fn gap_equal_to_threshold_does_not_fire() {
        let pts = [(T0, 1.0), (T0 + 21_600, 1.0)];
        assert_eq!(detect_changepoint(&track(&pts), &CpdConfig::default()).unwrap().reason, ChangeReason::None);
    }

    #[test]
    fn speed_drop_fires_sog_shift() {
        let pts: Vec<_> = (0..10).map(|i| (T0 + 60 * i, if i < 5 { 12.0 } else { 0.4 })).collect();
        let d = detect_changepoint(&track(&pts), &CpdConfig::default()).unwrap();
        assert_eq!(d.reason, ChangeReason::SogShift);
        assert!(d.detail.contains("12.00") && d.detail.contains("0.40"));
    }

    #[test]
    fn gap_takes_precedence_over_speed() {
        let mut pts: Vec<_> = (0..9).map(|i| (T0 + 60 * i, if i < 5 { 12.0 } else { 0.4 })).collect();
        pts.push((T0 + 480 + 30_000, 0.4));
        assert_eq!(detect_changepoint(&track(&pts), &CpdConfig::default()).unwrap().reason, ChangeReason::TimeGap);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert_eq!(detect_changepoint(&[], &CpdConfig::default()), Err(CpdError::EmptyWindow));
    }

    #[test]
    fn single_message_is_quiet() {
        let d = detect_changepoint(&track(&[(T0, 5.0)]), &CpdConfig::default()).unwrap();
        assert!(!d.is_changepoint);
    }

    #[test]
    fn config_validation() {
        assert!(CpdConfig::default().validate().is_ok());
        assert!(CpdConfig { sog_window_k: 0, ..Default::default() }.validate().is_err());
        assert!(CpdConfig { sog_shift_threshold_kn: 0.0, ..Default::default() }.validate().is_err());
        assert!(CpdConfig { time_gap_threshold_s: -1, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn short_windows_never_shift(
            sogs in proptest::collection::vec(0.0f64..30.0, 1..10),
        ) {
            let pts: Vec<_> = sogs.iter().enumerate().map(|(i, &s)| (T0 + 60 * i as i64, s)).collect();
            let d = detect_changepoint(&track(&pts), &CpdConfig::default()).unwrap();
            prop_assert_ne!(d.reason, ChangeReason::SogShift);
        }

        #[test]
        fn decision_invariants(
            steps in proptest::collection::vec((1i64..30_000, 0.0f64..20.0), 1..40),
        ) {
            let mut t = T0;
            let pts: Vec<_> = steps.iter().map(|&(dt, s)| { t += dt; (t, s) }).collect();
            let w = track(&pts);
            let d = detect_changepoint(&w, &CpdConfig::default()).unwrap();
            prop_assert_eq!(d.is_changepoint, d.reason != ChangeReason::None);
            if d.is_changepoint { prop_assert!(!d.detail.is_empty()); }
            prop_assert_eq!(d.clone(), detect_changepoint(&w, &CpdConfig::default()).unwrap());
        }
    }
}
