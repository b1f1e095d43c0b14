//! Label spaces for the two classification tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Activity of a vessel at its most recent message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityClass {
    Transiting,
    Anchored,
    Fishing,
    Moored,
    Other,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 5] = [
        ActivityClass::Transiting,
        ActivityClass::Anchored,
        ActivityClass::Fishing,
        ActivityClass::Moored,
        ActivityClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityClass::Transiting => "transiting",
            ActivityClass::Anchored => "anchored",
            ActivityClass::Fishing => "fishing",
            ActivityClass::Moored => "moored",
            ActivityClass::Other => "other",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivityClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Vessel-versus-buoy verdict. `Unknown` when there is not enough context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Vessel,
    Buoy,
    Unknown,
}

impl EntityClass {
    /// Classes the entity model predicts, in logit order.
    pub const MODELLED: [EntityClass; 2] = [EntityClass::Vessel, EntityClass::Buoy];

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Vessel => "vessel",
            EntityClass::Buoy => "buoy",
            EntityClass::Unknown => "unknown",
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::MODELLED.get(i).copied()
    }

    pub fn index(self) -> Option<usize> {
        Self::MODELLED.iter().position(|c| *c == self)
    }

    pub fn names() -> Vec<String> {
        Self::MODELLED.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [EntityClass::Vessel, EntityClass::Buoy, EntityClass::Unknown]
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Final label after post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", untagged)]
pub enum FinalClass {
    Activity(ActivityClass),
    Unknown(UnknownMarker),
}

/// Serializes as the string `"unknown"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownMarker {
    Unknown,
}

impl FinalClass {
    pub const UNKNOWN: FinalClass = FinalClass::Unknown(UnknownMarker::Unknown);

    pub fn name(self) -> &'static str {
        match self {
            FinalClass::Activity(c) => c.name(),
            FinalClass::Unknown(_) => "unknown",
        }
    }

    pub fn activity(self) -> Option<ActivityClass> {
        match self {
            FinalClass::Activity(c) => Some(c),
            FinalClass::Unknown(_) => None,
        }
    }
}

impl From<ActivityClass> for FinalClass {
    fn from(c: ActivityClass) -> Self {
        FinalClass::Activity(c)
    }
}

impl fmt::Display for FinalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FinalClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unknown") {
            return Ok(FinalClass::UNKNOWN);
        }
        s.parse::<ActivityClass>().map(FinalClass::Activity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class label `{0}`")]
pub struct UnknownLabel(pub String);
