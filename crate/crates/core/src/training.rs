//! Fitting and scoring models.
//!
//! Training minimises class-weighted cross-entropy with Adam, runs a fixed
//! number of epochs and keeps the weights from the epoch with the lowest
//! validation loss (earliest epoch on ties).

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_features, FeatureConfig, FeatureError};
use crate::ingest::{message_from_json, AisMessage, RecordError};
use crate::model::{backward, forward, init_weights, softmax, ModelConfig, ModelError, ModelWeights};

const CE_EPS: f64 = 1e-12;
const SPLIT_SALT: u64 = 0x5eed_5011;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("dataset line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `-weights[label] * ln(probs[label] + 1e-12)`.
pub fn weighted_cross_entropy(probs: &[f64], label: usize, weights: &[f64]) -> f64 {
    -weights[label] * (probs[label] + CE_EPS).ln()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_epochs: usize,
    /// Per-class loss weights; inverse training-split frequency when absent.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// Full-scale settings: batch 256, learning rate 1e-4, best of 4 epochs.
    pub fn full() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            n_epochs: 4,
            class_weights: None,
            seed: 0,
            validation_fraction: 0.1,
        }
    }

    /// Desk-scale settings for the small model.
    pub fn toy() -> Self {
        Self { batch_size: 32, learning_rate: 2e-3, n_epochs: 25, ..Self::full() }
    }

    fn validate(&self, n_classes: usize) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.n_epochs == 0 {
            return Err(TrainError::InvalidConfig("batch_size and n_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(TrainError::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes || w.iter().any(|&v| !(v > 0.0)) {
                return Err(TrainError::InvalidConfig(format!("need {n_classes} positive class weights")));
            }
        }
        Ok(())
    }
}

/// One model input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Array2<f64>,
    pub label: usize,
}

/// A labelled window as stored in dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub window: Vec<AisMessage>,
    pub label: String,
}

/// Read `{"window": [...], "label": "..."}` lines; every message is validated.
pub fn read_labeled_jsonl<R: BufRead>(reader: R) -> Result<Vec<LabeledWindow>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| TrainError::BadRecord { line: i + 1, reason };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label = value
            .get("label")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("missing string `label`".into()))?
            .to_string();
        let window = value
            .get("window")
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad("missing array `window`".into()))?
            .iter()
            .map(message_from_json)
            .collect::<Result<Vec<_>, RecordError>>()
            .map_err(|e| bad(e.to_string()))?;
        if window.is_empty() {
            return Err(bad("empty window".into()));
        }
        out.push(LabeledWindow { window, label });
    }
    Ok(out)
}

pub fn write_labeled_jsonl<W: Write>(mut writer: W, data: &[LabeledWindow]) -> Result<(), TrainError> {
    for item in data {
        serde_json::to_writer(&mut writer, item).map_err(|e| TrainError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Turn labelled windows into examples using the newest `max_len` messages of each.
pub fn examples_from_windows(
    data: &[LabeledWindow],
    classes: &[String],
    features: &FeatureConfig,
    max_len: usize,
) -> Result<Vec<Example>, TrainError> {
    data.iter()
        .enumerate()
        .map(|(i, item)| {
            let label = classes
                .iter()
                .position(|c| c.eq_ignore_ascii_case(&item.label))
                .ok_or_else(|| TrainError::BadRecord { line: i + 1, reason: format!("unknown label `{}`", item.label) })?;
            let start = item.window.len().saturating_sub(max_len);
            let features = build_features(&item.window[start..], features)?.rows;
            Ok(Example { features, label })
        })
        .collect()
}

/// Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelWeights,
    pub v: ModelWeights,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &ModelWeights) -> Self {
        Self { m: like.zeros_like(), v: like.zeros_like(), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `w` in place.
pub fn optimizer_step(w: &mut ModelWeights, g: &ModelWeights, state: &mut AdamState, lr: f64) -> Result<(), ModelError> {
    if !w.same_shape(g) || !w.same_shape(&state.m) {
        return Err(ModelError::ShapeMismatch("gradient or optimizer state does not match weights".into()));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let grads = g.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((_, param), (_, mut m)), ((_, mut v), (_, gv))) in w.tensors_mut().into_iter().zip(ms).zip(vs.into_iter().zip(grads)) {
        Zip::from(param).and(&mut m).and(&mut v).and(&gv).for_each(|p, m, v, &gv| {
            *m = b1 * *m + (1.0 - b1) * gv;
            *v = b2 * *v + (1.0 - b2) * gv * gv;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
    Ok(())
}

/// Index of the minimum, earliest on ties.
pub fn select_best_epoch(val_losses: &[f64]) -> Option<usize> {
    val_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
            Some((_, bl)) if bl <= l => best,
            _ => Some((i, l)),
        })
        .map(|(i, _)| i)
}

/// `N / (C * n_c)`; classes absent from `labels` get weight 1.
pub fn inverse_frequency_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { n / (n_classes as f64 * c as f64) })
        .collect()
}

/// Per-class shuffled split; each class with at least two examples
/// contributes at least one to validation when `fraction > 0`.
pub fn stratified_split(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (idx.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && n_val == 0 && idx.len() >= 2 {
            n_val = 1;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// One-based epoch the weights come from.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub class_weights: Vec<f64>,
}

pub fn write_log_csv<W: Write>(mut w: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in log {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

/// Mean weighted cross-entropy over `data`.
pub fn mean_loss(cfg: &ModelConfig, w: &ModelWeights, data: &[Example], class_weights: &[f64]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in data {
        let p = softmax(forward(cfg, w, &ex.features)?.view());
        total += weighted_cross_entropy(p.as_slice().expect("contiguous"), ex.label, class_weights);
    }
    Ok(total / data.len() as f64)
}

/// Split `dataset` (stratified) and train.
pub fn train_and_select(
    dataset: &[Example],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset("no training examples"));
    }
    let labels: Vec<usize> = dataset.iter().map(|e| e.label).collect();
    let (tr, va) = stratified_split(&labels, cfg.n_classes, tcfg.validation_fraction, tcfg.seed);
    let train: Vec<Example> = tr.iter().map(|&i| dataset[i].clone()).collect();
    let val: Vec<Example> = va.iter().map(|&i| dataset[i].clone()).collect();
    train_with_validation(&train, &val, cfg, tcfg, on_epoch)
}

/// Train on `train`, select on `val`.
pub fn train_with_validation(
    train: &[Example],
    val: &[Example],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    tcfg.validate(cfg.n_classes)?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("no training examples"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyDataset("no validation examples"));
    }
    if let Some(ex) = train.iter().chain(val).find(|e| e.label >= cfg.n_classes) {
        return Err(ModelError::InvalidLabel { label: ex.label, n_classes: cfg.n_classes }.into());
    }
    let class_weights = match &tcfg.class_weights {
        Some(w) => w.clone(),
        None => inverse_frequency_weights(&train.iter().map(|e| e.label).collect::<Vec<_>>(), cfg.n_classes),
    };

    let mut weights = init_weights(cfg, tcfg.seed)?;
    let mut adam = AdamState::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(tcfg.n_epochs);
    let mut best: Option<(f64, usize, ModelWeights)> = None;

    for epoch in 1..=tcfg.n_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad = weights.zeros_like();
            for &i in batch {
                let ex = &train[i];
                let (loss, g) = backward(cfg, &weights, &ex.features, ex.label, &class_weights)?;
                epoch_loss += loss;
                grad.scaled_add(1.0, &g);
            }
            grad.scale(1.0 / batch.len() as f64);
            optimizer_step(&mut weights, &grad, &mut adam, tcfg.learning_rate)?;
        }
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: mean_loss(cfg, &weights, val, &class_weights)?,
        };
        on_epoch(&entry);
        if best.as_ref().is_none_or(|(l, _, _)| entry.val_loss < *l) {
            best = Some((entry.val_loss, epoch, weights.clone()));
        }
        log.push(entry);
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    debug_assert_eq!(
        select_best_epoch(&log.iter().map(|e| e.val_loss).collect::<Vec<_>>()),
        Some(best_epoch - 1)
    );
    Ok(TrainOutcome { weights, best_epoch, log, class_weights })
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// `None` for classes with no true examples.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub recall: Vec<Option<f64>>,
}

impl Evaluation {
    pub fn from_predictions(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, TrainError> {
        let mut confusion = ConfusionMatrix::new(n_classes);
        for (truth, pred) in pairs {
            if truth >= n_classes || pred >= n_classes {
                return Err(ModelError::InvalidLabel { label: truth.max(pred), n_classes }.into());
            }
            confusion.record(truth, pred);
        }
        if confusion.total() == 0 {
            return Err(TrainError::EmptyDataset("nothing to evaluate"));
        }
        Ok(Self { accuracy: confusion.accuracy(), recall: confusion.recall(), confusion })
    }
}

pub fn argmax(v: &Array1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Last-position predictions of `w` scored against the example labels.
pub fn evaluate(cfg: &ModelConfig, w: &ModelWeights, data: &[Example]) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("nothing to evaluate"));
    }
    let mut pairs = Vec::with_capacity(data.len());
    for ex in data {
        pairs.push((ex.label, argmax(&forward(cfg, w, &ex.features)?)));
    }
    Evaluation::from_predictions(cfg.n_classes, pairs)
}
