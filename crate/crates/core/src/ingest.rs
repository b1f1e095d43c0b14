//! Decoding and validation of already-decoded AIS position reports.
//!
//! Two line formats are accepted:
//!
//! * CSV with the fixed column order
//!   `entity_id,timestamp,lat,lon,sog,cog[,vessel_type]`
//! * JSON lines keyed by the same lowercase field names.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Speeds above this are the AIS "not available" convention, not a measurement.
pub const SOG_SENTINEL_KN: f64 = 102.2;

/// One position report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisMessage {
    pub entity_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Knots.
    pub sog: f64,
    /// Degrees clockwise from true north, in `[0, 360)`.
    pub cog: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vessel_type: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    EntityId,
    Timestamp,
    Lat,
    Lon,
    Sog,
    Cog,
    VesselType,
    /// Anything after the last known column.
    Trailing,
}

const COLUMNS: [Field; 7] = [
    Field::EntityId,
    Field::Timestamp,
    Field::Lat,
    Field::Lon,
    Field::Sog,
    Field::Cog,
    Field::VesselType,
];

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::EntityId => "entity_id",
            Field::Timestamp => "timestamp",
            Field::Lat => "lat",
            Field::Lon => "lon",
            Field::Sog => "sog",
            Field::Cog => "cog",
            Field::VesselType => "vessel_type",
            Field::Trailing => "trailing",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("malformed record: field `{field}`: {reason}")]
    MalformedRecord { field: Field, reason: String },
    #[error("range violation: field `{field}` = {value}")]
    RangeViolation { field: Field, value: f64 },
}

impl RecordError {
    pub fn field(&self) -> Field {
        match self {
            RecordError::MalformedRecord { field, .. } | RecordError::RangeViolation { field, .. } => *field,
        }
    }

    fn malformed(field: Field, reason: impl Into<String>) -> Self {
        RecordError::MalformedRecord { field, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Parse one CSV record.
pub fn parse_record(line: &str) -> Result<AisMessage, RecordError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() < 6 {
        return Err(RecordError::malformed(
            COLUMNS[parts.len()],
            format!("expected at least 6 fields, found {}", parts.len()),
        ));
    }
    if parts.len() > 7 {
        return Err(RecordError::malformed(
            Field::Trailing,
            format!("expected at most 7 fields, found {}", parts.len()),
        ));
    }
    let entity_id = parse_entity_id(parts[0])?;
    let timestamp = parts[1]
        .parse::<i64>()
        .map_err(|e| RecordError::malformed(Field::Timestamp, e.to_string()))?;
    let num = |field: Field, s: &str| -> Result<f64, RecordError> {
        let v = s.parse::<f64>().map_err(|e| RecordError::malformed(field, e.to_string()))?;
        if !v.is_finite() {
            return Err(RecordError::malformed(field, "not a finite number"));
        }
        Ok(v)
    };
    let lat = num(Field::Lat, parts[2])?;
    let lon = num(Field::Lon, parts[3])?;
    let sog = num(Field::Sog, parts[4])?;
    let cog = num(Field::Cog, parts[5])?;
    let vessel_type = match parts.get(6) {
        None | Some(&"") => None,
        Some(s) => Some(
            s.parse::<i32>()
                .map_err(|e| RecordError::malformed(Field::VesselType, e.to_string()))?,
        ),
    };
    validate(AisMessage { entity_id, timestamp, lat, lon, sog, cog, vessel_type })
}

/// Parse one JSON-lines record.
pub fn parse_json_record(line: &str) -> Result<AisMessage, RecordError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| RecordError::malformed(Field::EntityId, format!("invalid JSON: {e}")))?;
    message_from_json(&value)
}

/// Extract a message from an already-parsed JSON object.
pub fn message_from_json(value: &Value) -> Result<AisMessage, RecordError> {
    let obj = value
        .as_object()
        .ok_or_else(|| RecordError::malformed(Field::EntityId, "record is not a JSON object"))?;
    let entity_id = match obj.get("entity_id") {
        Some(Value::String(s)) => parse_entity_id(s)?,
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(RecordError::malformed(Field::EntityId, "missing or not a string")),
    };
    let timestamp = obj
        .get("timestamp")
        .and_then(Value::as_i64)
        .ok_or_else(|| RecordError::malformed(Field::Timestamp, "missing or not an integer"))?;
    let num = |field: Field| -> Result<f64, RecordError> {
        obj.get(field.name())
            .and_then(Value::as_f64)
            .ok_or_else(|| RecordError::malformed(field, "missing or not a number"))
    };
    let lat = num(Field::Lat)?;
    let lon = num(Field::Lon)?;
    let sog = num(Field::Sog)?;
    let cog = num(Field::Cog)?;
    let vessel_type = match obj.get("vessel_type") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_i64()
                .and_then(|x| i32::try_from(x).ok())
                .ok_or_else(|| RecordError::malformed(Field::VesselType, "not an integer"))?,
        ),
    };
    validate(AisMessage { entity_id, timestamp, lat, lon, sog, cog, vessel_type })
}

/// Parse a line in the given format.
pub fn parse_line(line: &str, format: LineFormat) -> Result<AisMessage, RecordError> {
    match format {
        LineFormat::Csv => parse_record(line),
        LineFormat::Jsonl => parse_json_record(line),
    }
}

fn parse_entity_id(s: &str) -> Result<String, RecordError> {
    if s.is_empty() {
        return Err(RecordError::malformed(Field::EntityId, "empty identifier"));
    }
    if s.contains(',') {
        return Err(RecordError::malformed(Field::EntityId, "identifier contains a comma"));
    }
    Ok(s.to_string())
}

/// Range checks shared by both formats. A course of exactly 360 is folded to 0.
fn validate(mut m: AisMessage) -> Result<AisMessage, RecordError> {
    if m.timestamp <= 0 {
        return Err(RecordError::RangeViolation { field: Field::Timestamp, value: m.timestamp as f64 });
    }
    for (field, v) in [(Field::Lat, m.lat), (Field::Lon, m.lon), (Field::Sog, m.sog), (Field::Cog, m.cog)] {
        if !v.is_finite() {
            return Err(RecordError::malformed(field, "not a finite number"));
        }
    }
    if !(-90.0..=90.0).contains(&m.lat) {
        return Err(RecordError::RangeViolation { field: Field::Lat, value: m.lat });
    }
    if !(-180.0..=180.0).contains(&m.lon) {
        return Err(RecordError::RangeViolation { field: Field::Lon, value: m.lon });
    }
    if m.sog < 0.0 {
        return Err(RecordError::RangeViolation { field: Field::Sog, value: m.sog });
    }
    if !(0.0..=360.0).contains(&m.cog) {
        return Err(RecordError::RangeViolation { field: Field::Cog, value: m.cog });
    }
    if m.cog == 360.0 {
        m.cog = 0.0;
    }
    Ok(m)
}

/// Write a message back out as a CSV record.
pub fn format_record(m: &AisMessage) -> String {
    let mut s = format!("{},{},{},{},{},{}", m.entity_id, m.timestamp, m.lat, m.lon, m.sog, m.cog);
    if let Some(vt) = m.vessel_type {
        s.push_str(&format!(",{vt}"));
    }
    s
}

pub fn format_json_record(m: &AisMessage) -> String {
    serde_json::to_string(m).expect("message serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeConfig {
    /// Replacement speed for sentinel SOG values.
    pub sog_clamp_max_kn: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self { sog_clamp_max_kn: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub message: AisMessage,
    /// Set when the SOG was a sentinel and got clamped.
    pub sog_clamped: bool,
}

/// Fold the course into `[0, 360)` and clamp sentinel speeds. Total and idempotent.
pub fn normalize_message(msg: &AisMessage, cfg: &NormalizeConfig) -> Normalized {
    let mut message = msg.clone();
    let cog = message.cog.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    message.cog = if cog >= 360.0 { 0.0 } else { cog };
    let sog_clamped = message.sog > SOG_SENTINEL_KN;
    if sog_clamped {
        message.sog = cfg.sog_clamp_max_kn;
    }
    Normalized { message, sog_clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(sog: f64, cog: f64) -> AisMessage {
        AisMessage {
            entity_id: "563001234".into(),
            timestamp: 1_700_000_000,
            lat: 1.25,
            lon: 103.8,
            sog,
            cog,
            vessel_type: None,
        }
    }

    #[test]
    fn parses_well_formed_record() {
        let m = parse_record("563001234,1700000000,1.25,103.8,12.4,271.0").unwrap();
        assert_eq!(m, msg(12.4, 271.0));
    }

    #[test]
    fn parses_optional_vessel_type() {
        let m = parse_record("563001234,1700000000,1.25,103.8,12.4,271.0,30").unwrap();
        assert_eq!(m.vessel_type, Some(30));
    }

    #[test]
    fn latitude_out_of_range_names_lat() {
        let err = parse_record("563001234,1700000000,91.0,103.8,12.4,271.0").unwrap_err();
        assert_eq!(err, RecordError::RangeViolation { field: Field::Lat, value: 91.0 });
    }

    #[test]
    fn course_of_360_folds_to_zero() {
        let m = parse_record("563001234,1700000000,1.25,103.8,12.4,360.0").unwrap();
        assert_eq!(m.cog, 0.0);
    }

    #[test]
    fn errors_name_the_offending_field() {
        let cases = [
            ("563001234,1700000000,1.25,103.8,12.4", Field::Cog),
            ("563001234,17000x0000,1.25,103.8,12.4,271.0", Field::Timestamp),
            ("563001234,1700000000,1.25,abc,12.4,271.0", Field::Lon),
            ("563001234,1700000000,1.25,103.8,-1,271.0", Field::Sog),
            ("563001234,1700000000,1.25,181,1,271.0", Field::Lon),
            ("563001234,1700000000,1.25,103.8,1,400", Field::Cog),
            ("563001234,1700000000,1.25,103.8,1,4,x", Field::VesselType),
            ("563001234,1700000000,1.25,103.8,1,4,3,9", Field::Trailing),
            (",1700000000,1.25,103.8,1,4", Field::EntityId),
            ("563001234,0,1.25,103.8,1,4", Field::Timestamp),
            ("563001234,1700000000,NaN,103.8,1,4", Field::Lat),
        ];
        for (line, field) in cases {
            let err = parse_record(line).unwrap_err();
            assert_eq!(err.field(), field, "{line}: {err}");
        }
    }

    #[test]
    fn json_lines_use_lowercase_names() {
        let m = parse_json_record(
            r#"{"entity_id":"563001234","timestamp":1700000000,"lat":1.25,"lon":103.8,"sog":12.4,"cog":271.0}"#,
        )
        .unwrap();
        assert_eq!(m, msg(12.4, 271.0));
        let err = parse_json_record(r#"{"entity_id":"1","timestamp":1700000000,"lat":1.25,"lon":103.8,"cog":1}"#)
            .unwrap_err();
        assert_eq!(err.field(), Field::Sog);
        let err =
            parse_json_record(r#"{"entity_id":"1","timestamp":1700000000,"lat":-95,"lon":1,"sog":1,"cog":1}"#)
                .unwrap_err();
        assert_eq!(err.field(), Field::Lat);
    }

    #[test]
    fn normalize_examples() {
        let cfg = NormalizeConfig { sog_clamp_max_kn: 40.0 };
        assert_eq!(normalize_message(&msg(3.0, 360.0), &cfg).message.cog, 0.0);

        let n = normalize_message(&msg(102.3, 10.0), &cfg);
        assert_eq!(n.message.sog, 40.0);
        assert!(n.sog_clamped);

        let m = msg(12.4, 271.0);
        let n = normalize_message(&m, &cfg);
        assert!(!n.sog_clamped);
        assert_eq!(n.message.sog.to_bits(), m.sog.to_bits());
        assert_eq!(n.message.cog.to_bits(), m.cog.to_bits());
        assert_eq!(n.message, m);
    }

    fn arb_message() -> impl Strategy<Value = AisMessage> {
        (
            "[0-9]{9}",
            1i64..4_000_000_000,
            -90.0f64..=90.0,
            -180.0f64..=180.0,
            0.0f64..120.0,
            0.0f64..360.0,
            proptest::option::of(0i32..100),
        )
            .prop_map(|(entity_id, timestamp, lat, lon, sog, cog, vessel_type)| AisMessage {
                entity_id,
                timestamp,
                lat,
                lon,
                sog,
                cog,
                vessel_type,
            })
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(m in arb_message()) {
            prop_assert_eq!(parse_record(&format_record(&m)).unwrap(), m.clone());
            prop_assert_eq!(parse_json_record(&format_json_record(&m)).unwrap(), m);
        }

        #[test]
        fn normalize_is_idempotent(m in arb_message(), cog in -1000.0f64..1000.0, clamp in 1.0f64..60.0) {
            let cfg = NormalizeConfig { sog_clamp_max_kn: clamp };
            let m = AisMessage { cog, ..m };
            let once = normalize_message(&m, &cfg).message;
            prop_assert!((0.0..360.0).contains(&once.cog));
            let twice = normalize_message(&once, &cfg).message;
            prop_assert_eq!(once, twice);
        }
    }
}
