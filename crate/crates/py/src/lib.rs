//! Python bindings: message parsing, the track store, change-point
//! detection, features, checkpoints, synthetic data, training and the
//! streaming engine.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use wakeline_core::classes::{ActivityClass, EntityClass};
use wakeline_core::cpd::CpdConfig;
use wakeline_core::engine::{Classifier, Engine as CoreEngine, EngineConfig};
use wakeline_core::features::FeatureConfig;
use wakeline_core::ingest::{self, AisMessage, LineFormat, NormalizeConfig};
use wakeline_core::model::{self, ModelConfig};
use wakeline_core::postprocess::{self, PostProcessConfig};
use wakeline_core::serve::{self, ServeConfig};
use wakeline_core::synth::{self, DatasetConfig, Regime, RegimeSpec, SYNTH_EPOCH};
use wakeline_core::trackstore::{self, AppendOutcome, StoreConfig};
use wakeline_core::training::{self, LabeledWindow, TrainConfig};

create_exception!(wakeline, DeadLetterError, PyException);

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_enum<T: serde::de::DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| value_err(format!("unknown name `{name}`")))
}

#[pyclass(name = "AisMessage", module = "wakeline", eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct PyAisMessage {
    #[pyo3(get, set)]
    entity_id: String,
    #[pyo3(get, set)]
    timestamp: i64,
    #[pyo3(get, set)]
    lat: f64,
    #[pyo3(get, set)]
    lon: f64,
    #[pyo3(get, set)]
    sog: f64,
    #[pyo3(get, set)]
    cog: f64,
    #[pyo3(get, set)]
    vessel_type: Option<i32>,
}

impl From<AisMessage> for PyAisMessage {
    fn from(m: AisMessage) -> Self {
        Self { entity_id: m.entity_id, timestamp: m.timestamp, lat: m.lat, lon: m.lon, sog: m.sog, cog: m.cog, vessel_type: m.vessel_type }
    }
}

impl PyAisMessage {
    fn core(&self) -> AisMessage {
        AisMessage {
            entity_id: self.entity_id.clone(),
            timestamp: self.timestamp,
            lat: self.lat,
            lon: self.lon,
            sog: self.sog,
            cog: self.cog,
            vessel_type: self.vessel_type,
        }
    }
}

#[pymethods]
impl PyAisMessage {
    #[new]
    #[pyo3(signature = (entity_id, timestamp, lat, lon, sog, cog, vessel_type=None))]
    fn new(entity_id: String, timestamp: i64, lat: f64, lon: f64, sog: f64, cog: f64, vessel_type: Option<i32>) -> Self {
        Self { entity_id, timestamp, lat, lon, sog, cog, vessel_type }
    }

    fn to_csv(&self) -> String {
        ingest::format_record(&self.core())
    }

    fn to_json(&self) -> String {
        ingest::format_json_record(&self.core())
    }

    fn __repr__(&self) -> String {
        format!(
            "AisMessage(entity_id={:?}, timestamp={}, lat={}, lon={}, sog={}, cog={})",
            self.entity_id, self.timestamp, self.lat, self.lon, self.sog, self.cog
        )
    }
}

fn core_messages(list: &[PyRef<'_, PyAisMessage>]) -> Vec<AisMessage> {
    list.iter().map(|m| m.core()).collect()
}

fn py_messages(list: Vec<AisMessage>) -> Vec<PyAisMessage> {
    list.into_iter().map(PyAisMessage::from).collect()
}

/// Parse one CSV or JSON line; the format is detected when not given.
#[pyfunction]
#[pyo3(signature = (line, format=None))]
fn parse_record(line: &str, format: Option<&str>) -> PyResult<PyAisMessage> {
    let format: LineFormat = match format {
        Some(f) => parse_enum(f)?,
        None => serve::detect_format(line),
    };
    ingest::parse_line(line, format).map(PyAisMessage::from).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (msg, sog_clamp_max_kn=40.0))]
fn normalize(msg: &PyAisMessage, sog_clamp_max_kn: f64) -> PyAisMessage {
    ingest::normalize_message(&msg.core(), &NormalizeConfig { sog_clamp_max_kn }).message.into()
}

#[pyfunction]
fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    wakeline_core::geo::haversine_m((lat1, lon1), (lat2, lon2))
}

/// Returns `(is_changepoint, reason, detail)` for the last message of `window`.
#[pyfunction]
#[pyo3(signature = (window, time_gap_threshold_s=21_600, sog_window_k=5, sog_shift_threshold_kn=1.0, min_messages=None))]
fn detect_changepoint(
    window: Vec<PyRef<'_, PyAisMessage>>,
    time_gap_threshold_s: i64,
    sog_window_k: usize,
    sog_shift_threshold_kn: f64,
    min_messages: Option<usize>,
) -> PyResult<(bool, String, String)> {
    let cfg = CpdConfig {
        time_gap_threshold_s,
        sog_window_k,
        sog_shift_threshold_kn,
        min_messages: min_messages.unwrap_or(2 * sog_window_k),
    };
    let d = wakeline_core::cpd::detect_changepoint(&core_messages(&window), &cfg).map_err(value_err)?;
    Ok((d.is_changepoint, d.reason.to_string(), d.detail))
}

/// Returns `(column_names, rows)`.
#[pyfunction]
#[pyo3(signature = (window, n_anchor=9))]
fn build_features(window: Vec<PyRef<'_, PyAisMessage>>, n_anchor: usize) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let cfg = FeatureConfig { n_anchor, ..FeatureConfig::default() };
    let seq = wakeline_core::features::build_features(&core_messages(&window), &cfg).map_err(value_err)?;
    Ok((seq.layout, seq.rows.rows().into_iter().map(|r| r.to_vec()).collect()))
}

#[pyclass(name = "TrackStore", module = "wakeline")]
pub struct PyTrackStore {
    inner: trackstore::TrackStore,
}

#[pymethods]
impl PyTrackStore {
    #[new]
    #[pyo3(signature = (max_window_len=trackstore::MAX_WINDOW_LEN, window_span_s=trackstore::MAX_WINDOW_SPAN_S))]
    fn new(max_window_len: usize, window_span_s: i64) -> Self {
        let cfg = StoreConfig { max_window_len, window_span_s, ..StoreConfig::default() };
        Self { inner: trackstore::TrackStore::new(cfg) }
    }

    /// One of `stored`, `stored_late`, `duplicate`, `expired`.
    fn append(&mut self, msg: &PyAisMessage) -> &'static str {
        match self.inner.append(&msg.entity_id, msg.core()) {
            AppendOutcome::Stored { at_tail: true } => "stored",
            AppendOutcome::Stored { at_tail: false } => "stored_late",
            AppendOutcome::Duplicate => "duplicate",
            AppendOutcome::Expired => "expired",
        }
    }

    fn window(&mut self, entity_id: &str) -> PyResult<Vec<PyAisMessage>> {
        Ok(py_messages(self.inner.window_slice(entity_id).map_err(value_err)?.to_vec()))
    }

    fn history_len(&self, entity_id: &str) -> usize {
        self.inner.history_len(entity_id)
    }

    fn entities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.entities().map(str::to_string).collect();
        ids.sort();
        ids
    }
}

fn model_for(task: &str, preset: &str, width: usize) -> PyResult<(Vec<String>, ModelConfig)> {
    Ok(match (task, preset) {
        ("activity", "toy") => (ActivityClass::names(), ModelConfig::toy_activity(width)),
        ("activity", "full") => (ActivityClass::names(), ModelConfig::full_activity(width)),
        ("entity", "toy") => (EntityClass::names(), ModelConfig::toy_entity(width)),
        ("entity", "full") => (EntityClass::names(), ModelConfig::full_entity(width)),
        _ => return Err(value_err(format!("unknown task/preset `{task}`/`{preset}`"))),
    })
}

#[pyfunction]
#[pyo3(signature = (task="activity", preset="toy"))]
fn count_parameters(task: &str, preset: &str) -> PyResult<usize> {
    let (_, cfg) = model_for(task, preset, FeatureConfig::default().width())?;
    Ok(model::count_parameters(&cfg))
}

#[pyclass(name = "Checkpoint", module = "wakeline")]
pub struct PyCheckpoint {
    inner: Arc<Classifier>,
}

#[pymethods]
impl PyCheckpoint {
    /// Freshly initialised weights for `task` (`activity` or `entity`).
    #[staticmethod]
    #[pyo3(signature = (task="activity", preset="toy", seed=0))]
    fn init(task: &str, preset: &str, seed: u64) -> PyResult<Self> {
        let features = FeatureConfig::default();
        let (classes, cfg) = model_for(task, preset, features.width())?;
        let weights = model::init_weights(&cfg, seed).map_err(value_err)?;
        let ckpt = model::Checkpoint::new(cfg, features, classes, weights).map_err(value_err)?;
        Ok(Self { inner: Arc::new(Classifier::new(ckpt)) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = model::Checkpoint::load(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner: Arc::new(Classifier::new(ckpt)) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.checkpoint().save(path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes().to_vec()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.checkpoint().weights.n_params()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.checkpoint().model)
    }

    fn predict_proba(&self, py: Python<'_>, window: Vec<PyRef<'_, PyAisMessage>>) -> PyResult<Vec<f64>> {
        let msgs = core_messages(&window);
        let clf = self.inner.clone();
        py.detach(move || clf.probabilities(&msgs)).map_err(value_err)
    }

    fn predict(&self, py: Python<'_>, window: Vec<PyRef<'_, PyAisMessage>>) -> PyResult<String> {
        let msgs = core_messages(&window);
        let clf = self.inner.clone();
        let i = py.detach(move || clf.predict(&msgs)).map_err(value_err)?;
        Ok(self.inner.classes()[i].clone())
    }
}

#[pyclass(name = "LabeledTrack", module = "wakeline", frozen)]
pub struct PyLabeledTrack {
    #[pyo3(get)]
    messages: Vec<PyAisMessage>,
    #[pyo3(get)]
    regime: String,
    #[pyo3(get)]
    activity: String,
    #[pyo3(get)]
    entity: String,
}

impl From<synth::LabeledTrack> for PyLabeledTrack {
    fn from(t: synth::LabeledTrack) -> Self {
        let regime = serde_json::to_value(t.regime).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        Self { messages: py_messages(t.track.messages), regime, activity: t.activity.to_string(), entity: t.entity.to_string() }
    }
}

/// One synthetic track of `regime` (`transiting`, `fishing`, `anchored`, `moored`, `buoy_drift`).
#[pyfunction]
#[pyo3(signature = (regime, duration_s, seed=0, lat=0.0, lon=0.0, start=SYNTH_EPOCH))]
fn generate_track(regime: &str, duration_s: i64, seed: u64, lat: f64, lon: f64, start: i64) -> PyResult<PyLabeledTrack> {
    let regime: Regime = parse_enum(regime)?;
    synth::generate_track(&RegimeSpec::new(regime, duration_s, seed), (lat, lon), start).map(Into::into).map_err(value_err)
}

/// Balanced set of labelled tracks, `n_per_class` for each regime.
#[pyfunction]
#[pyo3(signature = (n_per_class=200, seed=0, track_duration_s=7_680))]
fn generate_dataset(n_per_class: usize, seed: u64, track_duration_s: i64) -> PyResult<Vec<PyLabeledTrack>> {
    let d = synth::generate_dataset_with(&DatasetConfig { n_per_class, seed, track_duration_s }).map_err(value_err)?;
    Ok(d.tracks().cloned().map(Into::into).collect())
}

type PyLabeled<'py> = Vec<(Vec<PyRef<'py, PyAisMessage>>, String)>;

/// Checkpoint, one-based best epoch, `(epoch, train_loss, val_loss)` log.
type TrainResult = (PyCheckpoint, usize, Vec<(usize, f64, f64)>);

fn labeled(windows: PyLabeled<'_>) -> Vec<LabeledWindow> {
    windows.into_iter().map(|(w, label)| LabeledWindow { window: core_messages(&w), label }).collect()
}

/// Train on `(messages, label)` pairs; returns `(checkpoint, best_epoch, log)`
/// with the log as `(epoch, train_loss, val_loss)` tuples.
#[pyfunction]
#[pyo3(signature = (windows, task="activity", preset="toy", epochs=None, learning_rate=None, batch_size=None, seed=0, max_len=2048))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    windows: PyLabeled<'_>,
    task: &str,
    preset: &str,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: u64,
    max_len: usize,
) -> PyResult<TrainResult> {
    let features = FeatureConfig::default();
    let (classes, cfg) = model_for(task, preset, features.width())?;
    let mut tcfg = if preset == "full" { TrainConfig::full() } else { TrainConfig::toy() };
    tcfg.seed = seed;
    tcfg.n_epochs = epochs.unwrap_or(tcfg.n_epochs);
    tcfg.learning_rate = learning_rate.unwrap_or(tcfg.learning_rate);
    tcfg.batch_size = batch_size.unwrap_or(tcfg.batch_size);
    let data = labeled(windows);
    let out = py
        .detach(|| {
            let examples = training::examples_from_windows(&data, &classes, &features, max_len)?;
            training::train_and_select(&examples, &cfg, &tcfg, |_| {})
        })
        .map_err(value_err)?;
    let log = out.log.iter().map(|e| (e.epoch, e.train_loss, e.val_loss)).collect();
    let ckpt = model::Checkpoint::new(cfg, features, classes, out.weights).map_err(value_err)?;
    Ok((PyCheckpoint { inner: Arc::new(Classifier::new(ckpt)) }, out.best_epoch, log))
}

/// Accuracy, per-class recall and confusion counts (rows are true labels).
#[pyfunction]
#[pyo3(signature = (checkpoint, windows, max_len=2048))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: &PyCheckpoint,
    windows: PyLabeled<'_>,
    max_len: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let ckpt = checkpoint.inner.checkpoint();
    let data = labeled(windows);
    let ev = py
        .detach(|| {
            let examples = training::examples_from_windows(&data, &ckpt.classes, &ckpt.features, max_len)?;
            training::evaluate(&ckpt.model, &ckpt.weights, &examples)
        })
        .map_err(value_err)?;
    to_py(py, &ev)
}

/// Apply the post-processing rules to one probability vector.
#[pyfunction]
#[pyo3(signature = (probs, msg, entity="vessel", confidence_threshold=0.5, fishing_max_sog_kn=10.0))]
fn apply_postprocess<'py>(
    py: Python<'py>,
    probs: Vec<f64>,
    msg: &PyAisMessage,
    entity: &str,
    confidence_threshold: f64,
    fishing_max_sog_kn: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let entity: EntityClass = entity.parse().map_err(value_err)?;
    let cfg = PostProcessConfig { confidence_threshold, fishing_max_sog_kn, ..PostProcessConfig::default() };
    cfg.validate().map_err(value_err)?;
    let ev = postprocess::apply_postprocess(&probs, &msg.core(), entity, &cfg).map_err(value_err)?;
    to_py(py, &ev)
}

#[pyclass(name = "Engine", module = "wakeline")]
pub struct PyEngine {
    inner: Option<CoreEngine>,
}

impl PyEngine {
    fn engine(&mut self) -> &mut CoreEngine {
        self.inner.as_mut().expect("engine is always restored after streaming")
    }
}

#[pymethods]
impl PyEngine {
    /// `config` is an optional JSON object with the engine settings
    /// (`store`, `cpd`, `postprocess`, `normalize`, `entity_min_context`, ...).
    #[new]
    #[pyo3(signature = (activity, entity=None, config=None))]
    fn new(activity: &PyCheckpoint, entity: Option<&PyCheckpoint>, config: Option<&str>) -> PyResult<Self> {
        let cfg: EngineConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => EngineConfig::default(),
        };
        cfg.validate().map_err(value_err)?;
        let metrics = cfg.new_metrics();
        let engine =
            CoreEngine::new(cfg, activity.inner.clone(), entity.map(|e| e.inner.clone()), metrics).map_err(value_err)?;
        Ok(Self { inner: Some(engine) })
    }

    /// The classification event for `msg`, or `None` when it is not a change
    /// point. Raises `DeadLetterError` when the message cannot be processed.
    fn on_message<'py>(&mut self, py: Python<'py>, msg: &PyAisMessage) -> PyResult<Option<Bound<'py, PyAny>>> {
        match self.engine().on_message(msg.core()) {
            Ok(Some(ev)) => Ok(Some(to_py(py, &ev)?)),
            Ok(None) => Ok(None),
            Err(d) => Err(DeadLetterError::new_err(serde_json::to_string(&d).map_err(value_err)?)),
        }
    }

    #[pyo3(signature = (line, format=None))]
    fn on_line<'py>(&mut self, py: Python<'py>, line: &str, format: Option<&str>) -> PyResult<Option<Bound<'py, PyAny>>> {
        let format: LineFormat = match format {
            Some(f) => parse_enum(f)?,
            None => serve::detect_format(line),
        };
        match self.engine().on_line(line, format) {
            Ok(Some(ev)) => Ok(Some(to_py(py, &ev)?)),
            Ok(None) => Ok(None),
            Err(d) => Err(DeadLetterError::new_err(serde_json::to_string(&d).map_err(value_err)?)),
        }
    }

    /// Stream `lines` through the engine; returns `(events, dead_letters)`.
    fn run_lines<'py>(&mut self, py: Python<'py>, lines: Vec<String>) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let engine = self.inner.take().expect("engine present");
        let (mut events, mut dead) = (Vec::new(), Vec::new());
        let result = py.detach(|| {
            serve::run_lines(lines.into_iter().map(Ok), &mut events, &mut dead, vec![engine], &ServeConfig::default())
        });
        let (_, mut engines) = result.map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner = engines.pop();
        let parse = |bytes: Vec<u8>| -> PyResult<Vec<serde_json::Value>> {
            String::from_utf8_lossy(&bytes).lines().map(|l| serde_json::from_str(l).map_err(value_err)).collect()
        };
        Ok((to_py(py, &parse(events)?)?, to_py(py, &parse(dead)?)?))
    }

    /// Recompute the vessel/buoy verdict for `entity_id`.
    fn classify_entity(&mut self, entity_id: &str) -> String {
        self.engine().classify_entity(entity_id).to_string()
    }

    fn history_len(&mut self, entity_id: &str) -> usize {
        self.engine().history_len(entity_id)
    }

    fn metrics<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine().metrics_snapshot())
    }
}

#[pymodule]
pub fn wakeline(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeadLetterError", m.py().get_type::<DeadLetterError>())?;
    m.add_class::<PyAisMessage>()?;
    m.add_class::<PyTrackStore>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyLabeledTrack>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(parse_record, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(detect_changepoint, m)?)?;
    m.add_function(wrap_pyfunction!(build_features, m)?)?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(generate_track, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(apply_postprocess, m)?)?;
    Ok(())
}
