//! The sequence classifier: point-embedding layers, 1-D convolutions and a
//! pre-norm transformer encoder, read out at the last sequence position.

mod checkpoint;
mod network;
pub mod ops;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use network::{backward, forward, forward_trace, loss_and_logits, ForwardTrace};
pub use ops::softmax;
pub use weights::{count_parameters, init_weights, Conv1d, EncoderBlock, LayerNorm, Linear, ModelWeights};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_cpe_layers: usize,
    pub n_cnn_layers: usize,
    pub n_transformer_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub cnn_kernel: usize,
    pub n_classes: usize,
    pub feature_width: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Desk-scale activity model (about 25k parameters at 31 features).
    pub fn toy_activity(feature_width: usize) -> Self {
        Self {
            n_cpe_layers: 2,
            n_cnn_layers: 2,
            n_transformer_layers: 1,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            cnn_kernel: 3,
            n_classes: 5,
            feature_width,
            max_seq_len: 2048,
        }
    }

    pub fn toy_entity(feature_width: usize) -> Self {
        Self { n_classes: 2, ..Self::toy_activity(feature_width) }
    }

    /// Full-size activity model: 6 embedding, 3 convolution and 9 encoder layers.
    pub fn full_activity(feature_width: usize) -> Self {
        Self {
            n_cpe_layers: 6,
            n_cnn_layers: 3,
            n_transformer_layers: 9,
            d_model: 196,
            n_heads: 4,
            d_ff: 784,
            cnn_kernel: 3,
            n_classes: 5,
            feature_width,
            max_seq_len: 2048,
        }
    }

    /// Full-size entity model: as the activity model with 4 encoder layers and 2 classes.
    pub fn full_entity(feature_width: usize) -> Self {
        Self { n_transformer_layers: 4, n_classes: 2, ..Self::full_activity(feature_width) }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_cpe_layers == 0 {
            return bad("at least one embedding layer is required");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.feature_width == 0 {
            return bad("widths and head count must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.cnn_kernel.is_multiple_of(2) {
            return bad("cnn_kernel must be odd");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        Ok(())
    }
}
