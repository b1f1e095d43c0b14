//! Self-describing checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes   "WKLN"
//! version    u32 LE
//! header_len u64 LE
//! header     UTF-8 JSON: model config, feature config + column layout,
//!            class names, tensor directory (name, shape, element offset)
//! payload    f32 LE values, tensors back to back in directory order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelWeights};
use crate::features::FeatureConfig;

const MAGIC: &[u8; 4] = b"WKLN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub classes: Vec<String>,
    pub weights: ModelWeights,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    features: FeatureConfig,
    layout: Vec<String>,
    classes: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        features: FeatureConfig,
        classes: Vec<String>,
        weights: ModelWeights,
    ) -> Result<Self, ModelError> {
        let ckpt = Self { model, features, classes, weights };
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        if self.features.width() != self.model.feature_width {
            return Err(ModelError::ShapeMismatch(format!(
                "feature layout has {} columns, model expects {}",
                self.features.width(),
                self.model.feature_width
            )));
        }
        if self.classes.len() != self.model.n_classes {
            return Err(ModelError::ShapeMismatch(format!(
                "{} class names for {} classes",
                self.classes.len(),
                self.model.n_classes
            )));
        }
        if !self.weights.same_shape(&ModelWeights::zeros(&self.model)) {
            return Err(ModelError::ShapeMismatch("weights do not match model config".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        self.validate()?;
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in self.weights.tensors() {
            tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset });
            offset += t.len();
        }
        let header = Header {
            model: self.model,
            features: self.features,
            layout: self.features.layout(),
            classes: self.classes.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for (_, t) in self.weights.tensors() {
            for &v in t.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let header_len = usize::try_from(u64::from_le_bytes(u64buf)).map_err(|_| bad("header too large"))?;
        if header_len > 1 << 26 {
            return Err(bad("header too large"));
        }
        let mut header = vec![0u8; header_len];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        header.model.validate()?;
        if header.layout != header.features.layout() {
            return Err(bad("feature layout does not match feature config"));
        }

        let mut weights = ModelWeights::zeros(&header.model);
        let expected = weights.tensors();
        if expected.len() != header.tensors.len() {
            return Err(bad(format!("{} tensors, expected {}", header.tensors.len(), expected.len())));
        }
        let mut offset = 0;
        for ((name, t), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() || entry.offset != offset {
                return Err(bad(format!("tensor `{}` does not match the model layout", entry.name)));
            }
            offset += t.len();
        }
        drop(expected);

        let mut payload = vec![0u8; offset * 4];
        input.read_exact(&mut payload)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        weights.set_flat(&values)?;
        if !weights.is_finite() {
            return Err(bad("non-finite weight values"));
        }
        Self::new(header.model, header.features, header.classes, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Weights rounded to the stored precision, as a reload would see them.
    pub fn quantized(&self) -> Self {
        let mut c = self.clone();
        c.weights.for_each_mut(|_, mut t| t.mapv_inplace(|v| f64::from(v as f32)));
        c
    }
}
