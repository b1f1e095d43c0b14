//! Real-time AIS vessel-behaviour classification.
//!
//! Messages flow through a per-entity [`trackstore`], a speed/time
//! [`cpd`] change-point detector, [`features`] extraction, the
//! [`model`] sequence classifier and [`postprocess`] rules. The
//! [`engine`] module ties these together for streaming use;
//! [`training`] and [`synth`] cover model fitting at desk scale.

pub mod classes;
pub mod cpd;
pub mod engine;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod serve;
pub mod synth;
pub mod trackstore;
pub mod training;

pub use classes::{ActivityClass, EntityClass, FinalClass};
pub use ingest::AisMessage;
pub use trackstore::TrackWindow;
