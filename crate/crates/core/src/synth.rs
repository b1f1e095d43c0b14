//! Seeded synthetic trajectories with distinct behavioural regimes.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ActivityClass, EntityClass};
use crate::geo::{step_position, NM_M};
use crate::ingest::{format_record, AisMessage};
use crate::trackstore::TrackWindow;
use crate::training::LabeledWindow;

const KN_TO_MS: f64 = NM_M / 3600.0;
const FISHING_TURN_PROB: f64 = 0.25;
const FISHING_WANDER_DEG: f64 = 5.0;
/// First synthetic timestamp: 2023-11-14T22:13:20Z.
pub const SYNTH_EPOCH: i64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Transiting,
    Fishing,
    Anchored,
    Moored,
    BuoyDrift,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::Transiting, Regime::Fishing, Regime::Anchored, Regime::Moored, Regime::BuoyDrift];

    pub fn activity(self) -> ActivityClass {
        match self {
            Regime::Transiting => ActivityClass::Transiting,
            Regime::Fishing => ActivityClass::Fishing,
            Regime::Anchored => ActivityClass::Anchored,
            Regime::Moored => ActivityClass::Moored,
            Regime::BuoyDrift => ActivityClass::Other,
        }
    }

    pub fn entity(self) -> EntityClass {
        match self {
            Regime::BuoyDrift => EntityClass::Buoy,
            _ => EntityClass::Vessel,
        }
    }

    /// Widest speed band the regime contract allows.
    pub fn speed_envelope_kn(self) -> (f64, f64) {
        match self {
            Regime::Transiting => (8.0, 16.0),
            Regime::Fishing => (1.0, 5.0),
            Regime::Anchored => (0.0, 0.5),
            Regime::Moored => (0.0, 0.2),
            Regime::BuoyDrift => (0.0, 1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub duration_s: i64,
    pub cadence_mean_s: f64,
    /// Uniform jitter half-width around the nominal cadence grid.
    pub cadence_jitter_s: f64,
    pub speed_band_kn: (f64, f64),
    /// Transiting and BuoyDrift: largest course change per step.
    /// Fishing: smallest course change on a turn step.
    pub course_change_deg: f64,
    /// Anchored: swing radius. Moored: position scatter radius.
    pub scatter_radius_m: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid regime spec: {0}")]
    InvalidSpec(String),
}

impl RegimeSpec {
    /// Contract defaults for `regime`.
    pub fn new(regime: Regime, duration_s: i64, seed: u64) -> Self {
        let (course_change_deg, scatter_radius_m) = match regime {
            Regime::Transiting => (2.0, 0.0),
            Regime::Fishing => (30.0, 0.0),
            Regime::Anchored => (0.0, 150.0),
            Regime::Moored => (0.0, 25.0),
            Regime::BuoyDrift => (8.0, 0.0),
        };
        Self {
            regime,
            duration_s,
            cadence_mean_s: 60.0,
            cadence_jitter_s: 15.0,
            speed_band_kn: regime.speed_envelope_kn(),
            course_change_deg,
            scatter_radius_m,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.duration_s <= 0 {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.cadence_mean_s > 0.0) || !self.cadence_mean_s.is_finite() {
            return bad("cadence mean must be positive".into());
        }
        if !(0.0..self.cadence_mean_s / 2.0).contains(&self.cadence_jitter_s) {
            return bad("cadence jitter must be in [0, cadence/2)".into());
        }
        let (lo, hi) = self.speed_band_kn;
        let (env_lo, env_hi) = self.regime.speed_envelope_kn();
        if !(lo <= hi) || lo < env_lo || hi > env_hi {
            return bad(format!("speed band [{lo}, {hi}] outside [{env_lo}, {env_hi}] for {:?}", self.regime));
        }
        if !(self.course_change_deg >= 0.0 && self.course_change_deg <= 180.0) {
            return bad("course change must be in [0, 180]".into());
        }
        let max_radius = match self.regime {
            Regime::Anchored => 150.0,
            Regime::Moored => 25.0,
            _ => f64::INFINITY,
        };
        if !(self.scatter_radius_m >= 0.0 && self.scatter_radius_m <= max_radius) {
            return bad(format!("scatter radius must be in [0, {max_radius}] m"));
        }
        if self.regime == Regime::Fishing && self.course_change_deg > 150.0 {
            return bad("fishing turn size must be at most 150 degrees".into());
        }
        Ok(())
    }

    /// Messages a track of this spec contains.
    pub fn n_messages(&self) -> usize {
        (self.duration_s as f64 / self.cadence_mean_s).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrack {
    pub track: TrackWindow,
    pub regime: Regime,
    pub activity: ActivityClass,
    pub entity: EntityClass,
}

impl LabeledTrack {
    pub fn activity_window(&self) -> LabeledWindow {
        LabeledWindow { window: self.track.messages.clone(), label: self.activity.name().to_string() }
    }

    pub fn entity_window(&self) -> LabeledWindow {
        LabeledWindow { window: self.track.messages.clone(), label: self.entity.name().to_string() }
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let mut v = v;
    for _ in 0..4 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

fn wrap_deg(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Generate one track starting at `origin` (lat, lon) and `start_t`.
pub fn generate_track(spec: &RegimeSpec, origin: (f64, f64), start_t: i64) -> Result<LabeledTrack, SynthError> {
    spec.validate()?;
    if !(-85.0..=85.0).contains(&origin.0) || !(-180.0..=180.0).contains(&origin.1) {
        return Err(SynthError::InvalidSpec(format!("origin {origin:?} out of range")));
    }
    if start_t <= 0 {
        return Err(SynthError::InvalidSpec("start time must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_messages();
    let (lo, hi) = spec.speed_band_kn;
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let jitter = if i == 0 || spec.cadence_jitter_s == 0.0 {
            0.0
        } else {
            rng.random_range(-spec.cadence_jitter_s..=spec.cadence_jitter_s)
        };
        let t = start_t + (i as f64 * spec.cadence_mean_s + jitter).round() as i64;
        let prev = times.last().copied().unwrap_or(t - 1);
        times.push(t.max(prev + 1));
    }

    let entity_id = (100_000_000 + spec.seed % 900_000_000).to_string();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut messages = Vec::with_capacity(n);
    let mut push = |t: i64, (lat, lon): (f64, f64), sog: f64, cog: f64| {
        messages.push(AisMessage {
            entity_id: entity_id.clone(),
            timestamp: t,
            lat,
            lon,
            sog: sog.clamp(lo, hi),
            cog: wrap_deg(cog),
            vessel_type: None,
        });
    };

    match spec.regime {
        Regime::Transiting | Regime::Fishing | Regime::BuoyDrift => {
            let mut pos = origin;
            let mut sog = rng.random_range(lo..=hi);
            let mut cog: f64 = rng.random_range(0.0..360.0);
            let sog_sigma = match spec.regime {
                Regime::Transiting => 0.3,
                Regime::Fishing => 0.5,
                _ => 0.08,
            };
            for i in 0..n {
                if i > 0 {
                    let dt = (times[i] - times[i - 1]) as f64;
                    pos = step_position(pos.0, pos.1, cog, sog * KN_TO_MS * dt);
                    sog = reflect(sog + sog_sigma * unit.sample(&mut rng), lo, hi);
                    let turn = match spec.regime {
                        Regime::Fishing if rng.random_bool(FISHING_TURN_PROB) => {
                            let mag = rng.random_range(spec.course_change_deg..=150.0);
                            if rng.random_bool(0.5) { mag } else { -mag }
                        }
                        Regime::Fishing => rng.random_range(-FISHING_WANDER_DEG..=FISHING_WANDER_DEG),
                        _ if spec.course_change_deg > 0.0 => {
                            rng.random_range(-spec.course_change_deg..=spec.course_change_deg)
                        }
                        _ => 0.0,
                    };
                    cog += turn;
                }
                push(times[i], pos, sog, cog);
            }
        }
        Regime::Anchored => {
            let anchor = origin;
            let radius = spec.scatter_radius_m * rng.random_range(0.3..0.95);
            let mut theta: f64 = rng.random_range(0.0..360.0);
            let mut omega = 0.0f64;
            for i in 0..n {
                let dt = if i == 0 { spec.cadence_mean_s } else { (times[i] - times[i - 1]) as f64 };
                let max_omega = hi * KN_TO_MS * dt / radius.max(1e-9) * 180.0 / std::f64::consts::PI;
                omega = (omega + 0.3 * unit.sample(&mut rng)).clamp(-max_omega, max_omega);
                if i > 0 {
                    theta += omega;
                }
                let arc_m = radius * omega.abs().to_radians();
                let sog = arc_m / dt / KN_TO_MS;
                let cog = theta + if omega >= 0.0 { 90.0 } else { -90.0 };
                push(times[i], step_position(anchor.0, anchor.1, theta, radius), sog, cog);
            }
        }
        Regime::Moored => {
            let berth = origin;
            for &t in &times {
                let r = spec.scatter_radius_m * rng.random::<f64>().sqrt();
                let bearing = rng.random_range(0.0..360.0);
                let sog = rng.random_range(lo..=hi);
                let cog = rng.random_range(0.0..360.0);
                push(t, step_position(berth.0, berth.1, bearing, r), sog, cog);
            }
        }
    }

    Ok(LabeledTrack {
        track: TrackWindow::new(entity_id.clone(), messages),
        regime: spec.regime,
        activity: spec.regime.activity(),
        entity: spec.regime.entity(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub track_duration_s: i64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_per_class: 200, seed: 0, track_duration_s: 128 * 60 }
    }
}

/// Balanced activity tracks (one regime per activity class) plus extra
/// drifting-buoy tracks for entity training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub activity: Vec<LabeledTrack>,
    pub buoys: Vec<LabeledTrack>,
}

impl SynthDataset {
    pub fn activity_windows(&self) -> Vec<LabeledWindow> {
        self.activity.iter().map(LabeledTrack::activity_window).collect()
    }

    /// Every track labelled vessel or buoy.
    pub fn entity_windows(&self) -> Vec<LabeledWindow> {
        self.activity.iter().chain(&self.buoys).map(LabeledTrack::entity_window).collect()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &LabeledTrack> {
        self.activity.iter().chain(&self.buoys)
    }
}

fn track_seed(master: u64, index: u64) -> u64 {
    // splitmix64 step keeps per-track streams unrelated
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_dataset(n_per_class: usize, seed: u64) -> SynthDataset {
    generate_dataset_with(&DatasetConfig { n_per_class, seed, ..DatasetConfig::default() })
        .expect("default dataset config is valid")
}

pub fn generate_dataset_with(cfg: &DatasetConfig) -> Result<SynthDataset, SynthError> {
    if cfg.n_per_class == 0 {
        return Err(SynthError::InvalidSpec("n_per_class must be at least 1".into()));
    }
    let mut index = 0u64;
    let mut make = |regime: Regime| -> Result<LabeledTrack, SynthError> {
        let s = track_seed(cfg.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let origin = (rng.random_range(-60.0..60.0), rng.random_range(-179.0..179.0));
        let start = SYNTH_EPOCH + rng.random_range(0..30 * 86_400);
        let mut track = generate_track(&RegimeSpec::new(regime, cfg.track_duration_s, s), origin, start)?;
        let id = (200_000_000 + index).to_string();
        for m in &mut track.track.messages {
            m.entity_id = id.clone();
        }
        track.track.entity_id = id;
        index += 1;
        Ok(track)
    };
    let mut activity = Vec::with_capacity(5 * cfg.n_per_class);
    for _ in 0..cfg.n_per_class {
        for regime in Regime::ALL {
            activity.push(make(regime)?);
        }
    }
    let buoys = (0..cfg.n_per_class).map(|_| make(Regime::BuoyDrift)).collect::<Result<_, _>>()?;
    Ok(SynthDataset { activity, buoys })
}

/// Write every message of `tracks` as ingest CSV, track by track.
pub fn write_tracks_csv<'a, W: Write>(mut w: W, tracks: impl IntoIterator<Item = &'a LabeledTrack>) -> std::io::Result<()> {
    for t in tracks {
        for m in &t.track.messages {
            writeln!(w, "{}", format_record(m))?;
        }
    }
    w.flush()
}
