use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { weight: Array2::zeros((d_in, d_out)), bias: Array1::zeros(d_out) }
    }

    fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

/// Same-length 1-D convolution over the sequence axis, `kernel x in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn new(d: usize, gain: f64) -> Self {
        Self { gain: Array1::from_elem(d, gain), bias: Array1::zeros(d) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderBlock {
    fn param_count(cfg: &ModelConfig) -> usize {
        let d = cfg.d_model;
        4 * d + 4 * Linear::param_count(d, d) + Linear::param_count(d, cfg.d_ff) + Linear::param_count(cfg.d_ff, d)
    }
}

/// Every trainable array of the network. Also used as the gradient and
/// optimizer-moment container, since those share the exact same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub cpe: Vec<Linear>,
    pub cnn: Vec<Conv1d>,
    pub blocks: Vec<EncoderBlock>,
    pub head: Linear,
}

impl ModelWeights {
    /// All-zero arrays shaped for `cfg`. Layer-norm gains are zero too.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::filled(cfg, 0.0)
    }

    fn filled(cfg: &ModelConfig, ln_gain: f64) -> Self {
        let d = cfg.d_model;
        let cpe = (0..cfg.n_cpe_layers)
            .map(|i| Linear::zeros(if i == 0 { cfg.feature_width } else { d }, d))
            .collect();
        let cnn = (0..cfg.n_cnn_layers)
            .map(|_| Conv1d { weight: Array3::zeros((cfg.cnn_kernel, d, d)), bias: Array1::zeros(d) })
            .collect();
        let blocks = (0..cfg.n_transformer_layers)
            .map(|_| EncoderBlock {
                ln1: LayerNorm::new(d, ln_gain),
                q: Linear::zeros(d, d),
                k: Linear::zeros(d, d),
                v: Linear::zeros(d, d),
                o: Linear::zeros(d, d),
                ln2: LayerNorm::new(d, ln_gain),
                ff1: Linear::zeros(d, cfg.d_ff),
                ff2: Linear::zeros(cfg.d_ff, d),
            })
            .collect();
        Self { cpe, cnn, blocks, head: Linear::zeros(d, cfg.n_classes) }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, mut t| t.fill(0.0));
        z
    }

    /// Named read-only views in canonical order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.cpe.iter().enumerate() {
            out.push((format!("cpe.{i}.weight"), l.weight.view().into_dyn()));
            out.push((format!("cpe.{i}.bias"), l.bias.view().into_dyn()));
        }
        for (i, c) in self.cnn.iter().enumerate() {
            out.push((format!("cnn.{i}.weight"), c.weight.view().into_dyn()));
            out.push((format!("cnn.{i}.bias"), c.bias.view().into_dyn()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln1.gain"), b.ln1.gain.view().into_dyn()));
            out.push((format!("{p}.ln1.bias"), b.ln1.bias.view().into_dyn()));
            for (n, l) in [("q", &b.q), ("k", &b.k), ("v", &b.v), ("o", &b.o)] {
                out.push((format!("{p}.attn.{n}.weight"), l.weight.view().into_dyn()));
                out.push((format!("{p}.attn.{n}.bias"), l.bias.view().into_dyn()));
            }
            out.push((format!("{p}.ln2.gain"), b.ln2.gain.view().into_dyn()));
            out.push((format!("{p}.ln2.bias"), b.ln2.bias.view().into_dyn()));
            for (n, l) in [("ff1", &b.ff1), ("ff2", &b.ff2)] {
                out.push((format!("{p}.{n}.weight"), l.weight.view().into_dyn()));
                out.push((format!("{p}.{n}.bias"), l.bias.view().into_dyn()));
            }
        }
        out.push(("head.weight".into(), self.head.weight.view().into_dyn()));
        out.push(("head.bias".into(), self.head.bias.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.cpe.iter_mut().enumerate() {
            out.push((format!("cpe.{i}.weight"), l.weight.view_mut().into_dyn()));
            out.push((format!("cpe.{i}.bias"), l.bias.view_mut().into_dyn()));
        }
        for (i, c) in self.cnn.iter_mut().enumerate() {
            out.push((format!("cnn.{i}.weight"), c.weight.view_mut().into_dyn()));
            out.push((format!("cnn.{i}.bias"), c.bias.view_mut().into_dyn()));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln1.gain"), b.ln1.gain.view_mut().into_dyn()));
            out.push((format!("{p}.ln1.bias"), b.ln1.bias.view_mut().into_dyn()));
            for (n, l) in [("q", &mut b.q), ("k", &mut b.k), ("v", &mut b.v), ("o", &mut b.o)] {
                out.push((format!("{p}.attn.{n}.weight"), l.weight.view_mut().into_dyn()));
                out.push((format!("{p}.attn.{n}.bias"), l.bias.view_mut().into_dyn()));
            }
            out.push((format!("{p}.ln2.gain"), b.ln2.gain.view_mut().into_dyn()));
            out.push((format!("{p}.ln2.bias"), b.ln2.bias.view_mut().into_dyn()));
            for (n, l) in [("ff1", &mut b.ff1), ("ff2", &mut b.ff2)] {
                out.push((format!("{p}.{n}.weight"), l.weight.view_mut().into_dyn()));
                out.push((format!("{p}.{n}.bias"), l.bias.view_mut().into_dyn()));
            }
        }
        out.push(("head.weight".into(), self.head.weight.view_mut().into_dyn()));
        out.push(("head.bias".into(), self.head.bias.view_mut().into_dyn()));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, ArrayViewMutD<'_, f64>)) {
        for (name, t) in self.tensors_mut() {
            f(&name, t);
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn same_shape(&self, other: &ModelWeights) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.shape() == y.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Flatten every array into one vector in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.n_params() {
            return Err(ModelError::ShapeMismatch(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut offset = 0;
        self.for_each_mut(|_, mut t| {
            for v in t.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        });
        Ok(())
    }

    /// `self += alpha * other`, elementwise.
    pub fn scaled_add(&mut self, alpha: f64, other: &ModelWeights) {
        let src = other.tensors();
        let mut i = 0;
        self.for_each_mut(|_, t| {
            Zip::from(t).and(&src[i].1).for_each(|a, &b| *a += alpha * b);
            i += 1;
        });
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_mut(|_, mut t| t.mapv_inplace(|v| v * alpha));
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

/// Closed-form parameter total for `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let cpe = if cfg.n_cpe_layers == 0 {
        0
    } else {
        Linear::param_count(cfg.feature_width, d) + (cfg.n_cpe_layers - 1) * Linear::param_count(d, d)
    };
    let cnn = cfg.n_cnn_layers * (cfg.cnn_kernel * d * d + d);
    let blocks = cfg.n_transformer_layers * EncoderBlock::param_count(cfg);
    cpe + cnn + blocks + Linear::param_count(d, cfg.n_classes)
}

/// Seeded initialization: weights drawn from `N(0, 1/fan_in)`, biases zero,
/// layer-norm gains one.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights, ModelError> {
    cfg.validate()?;
    let mut w = ModelWeights::filled(cfg, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.for_each_mut(|name, mut t| {
        if !name.ends_with(".weight") {
            return;
        }
        let shape = t.shape();
        // fan-in is every axis but the output one
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        t.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    });
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_cpe_layers: 2,
            n_cnn_layers: 1,
            n_transformer_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            cnn_kernel: 3,
            n_classes: 5,
            feature_width: 7,
            max_seq_len: 64,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_weights(&tiny(), 3).unwrap();
        let b = init_weights(&tiny(), 3).unwrap();
        let bits = |w: &ModelWeights| w.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_weights(&tiny(), 4).unwrap()));
    }

    #[test]
    fn biases_start_at_zero() {
        let w = init_weights(&tiny(), 1).unwrap();
        for (name, t) in w.tensors() {
            if name.ends_with(".bias") {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with(".gain") {
                assert!(t.iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn projection_variance_is_one_over_fan_in() {
        let cfg = ModelConfig { d_model: 64, n_heads: 4, ..tiny() };
        let w = init_weights(&cfg, 11).unwrap();
        let q = &w.blocks[0].q.weight;
        let n = q.len() as f64;
        let mean = q.sum() / n;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0 / 64.0).abs() < 0.2 / 64.0, "variance {var}");
    }

    #[test]
    fn single_affine_map_count() {
        let cfg = ModelConfig {
            n_cpe_layers: 1,
            n_cnn_layers: 0,
            n_transformer_layers: 0,
            d_model: 5,
            n_heads: 1,
            d_ff: 1,
            cnn_kernel: 1,
            n_classes: 2,
            feature_width: 4,
            max_seq_len: 8,
        };
        // one embedding map 4 -> 5 plus the 5 -> 2 head
        assert_eq!(count_parameters(&cfg), 25 + 12);
        assert_eq!(Linear::param_count(4, 5), 25);
    }

    #[test]
    fn count_matches_enumeration() {
        for cfg in [tiny(), ModelConfig::toy_activity(31), ModelConfig::toy_entity(13)] {
            assert_eq!(count_parameters(&cfg), init_weights(&cfg, 0).unwrap().n_params());
        }
    }

    #[test]
    fn extra_encoder_layers_add_block_count() {
        let base = tiny();
        let more = ModelConfig { n_transformer_layers: 3, ..base };
        assert_eq!(count_parameters(&more) - count_parameters(&base), 2 * EncoderBlock::param_count(&base));
    }

    #[test]
    fn flat_round_trip() {
        let w = init_weights(&tiny(), 5).unwrap();
        let mut z = w.zeros_like();
        z.set_flat(&w.to_flat()).unwrap();
        assert_eq!(z, w);
        assert!(z.set_flat(&[1.0]).is_err());
    }
}
