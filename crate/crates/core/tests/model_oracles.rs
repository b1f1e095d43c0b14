mod common;

use ndarray::Array2;
use wakeline::model::{backward, count_parameters, forward, init_weights, loss_and_logits, softmax, ModelConfig};

fn tiny() -> ModelConfig {
    ModelConfig {
        n_cpe_layers: 1,
        n_cnn_layers: 1,
        n_transformer_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        cnn_kernel: 3,
        n_classes: 5,
        feature_width: 7,
        max_seq_len: 16,
    }
}

fn deep_small() -> ModelConfig {
    ModelConfig { n_cpe_layers: 2, n_cnn_layers: 2, n_transformer_layers: 2, d_ff: 12, ..tiny() }
}

fn input(len: usize, width: usize, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((len, width), |(i, j)| {
        let v = ((i as u64 * 31 + j as u64 * 17 + seed * 7) % 23) as f64;
        v / 11.0 - 1.0
    })
}

#[test]
fn forward_matches_reference_on_tiny_config() {
    let cfg = tiny();
    let w = init_weights(&cfg, 7).unwrap();
    let x = input(4, 7, 1);
    let got = forward(&cfg, &w, &x).unwrap();
    let want = common::reference_logits(&cfg, &w, &common::to_mat(&x));
    for (g, r) in got.iter().zip(&want) {
        assert!((g - r).abs() < 1e-6, "{got:?} vs {want:?}");
    }
}

#[test]
fn forward_matches_reference_on_deeper_config() {
    let cfg = deep_small();
    let w = init_weights(&cfg, 8).unwrap();
    for len in [1, 2, 9] {
        let x = input(len, 7, len as u64);
        let got = forward(&cfg, &w, &x).unwrap();
        let want = common::reference_logits(&cfg, &w, &common::to_mat(&x));
        for (g, r) in got.iter().zip(&want) {
            assert!((g - r).abs() < 1e-9);
        }
    }
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over all weights.
fn max_relative_gradient_error(cfg: &ModelConfig, seed: u64, len: usize, label: usize) -> f64 {
    let w = init_weights(cfg, seed).unwrap();
    let x = input(len, cfg.feature_width, seed);
    let cw: Vec<f64> = (0..cfg.n_classes).map(|c| 0.5 + c as f64 * 0.25).collect();
    let (_, g) = backward(cfg, &w, &x, label, &cw).unwrap();
    let mut probe = w.clone();
    let numeric = common::central_differences(
        |p| {
            probe.set_flat(p).unwrap();
            loss_and_logits(cfg, &probe, &x, label, &cw).unwrap().0
        },
        &w.to_flat(),
        1e-4,
    );
    g.to_flat()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_central_differences() {
    for (cfg, len, label) in [(tiny(), 4, 2), (deep_small(), 6, 4)] {
        assert!(count_parameters(&cfg) <= 5_000);
        let err = max_relative_gradient_error(&cfg, 3, len, label);
        assert!(err <= 1e-4, "max relative error {err:e}");
    }
}

#[test]
fn permuting_heads_leaves_logits_unchanged() {
    let cfg = ModelConfig { n_heads: 4, ..deep_small() };
    let w = init_weights(&cfg, 21).unwrap();
    let dh = cfg.head_dim();
    let perm = [2usize, 0, 3, 1];
    let mut p = w.clone();
    for (blk, orig) in p.blocks.iter_mut().zip(&w.blocks) {
        for (dst_head, &src_head) in perm.iter().enumerate() {
            for c in 0..dh {
                let (dc, sc) = (dst_head * dh + c, src_head * dh + c);
                for (dst, src) in [(&mut blk.q, &orig.q), (&mut blk.k, &orig.k), (&mut blk.v, &orig.v)] {
                    dst.weight.column_mut(dc).assign(&src.weight.column(sc));
                    dst.bias[dc] = src.bias[sc];
                }
                blk.o.weight.row_mut(dc).assign(&orig.o.weight.row(sc));
            }
        }
    }
    assert_ne!(p, w);
    let x = input(7, 7, 5);
    let a = forward(&cfg, &w, &x).unwrap();
    let b = forward(&cfg, &p, &x).unwrap();
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn probabilities_sum_to_one() {
    let cfg = deep_small();
    for seed in 0..20 {
        let w = init_weights(&cfg, seed).unwrap();
        let p = softmax(forward(&cfg, &w, &input(5, 7, seed)).unwrap().view());
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}
