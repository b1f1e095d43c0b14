#![allow(dead_code)]

//! Test-only reference implementations, written with plain nested loops and
//! no shared code with the library's matrix path.

use wakeline::model::{ModelConfig, ModelWeights};

pub type Mat = Vec<Vec<f64>>;

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn matmul_bias(x: &Mat, w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>) -> Mat {
    x.iter()
        .map(|row| {
            (0..w.ncols())
                .map(|j| b[j] + (0..w.nrows()).map(|i| row[i] * w[[i, j]]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, g: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Step-by-step forward pass computing every position in every block,
/// returning the logits at the last position.
pub fn reference_logits(cfg: &ModelConfig, w: &ModelWeights, x: &Mat) -> Vec<f64> {
    let len = x.len();
    let mut h = x.clone();
    for layer in &w.cpe {
        h = matmul_bias(&h, &layer.weight, &layer.bias).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    }
    for conv in &w.cnn {
        let k = conv.weight.shape()[0];
        let half = (k / 2) as isize;
        let d_out = conv.weight.shape()[2];
        let mut out = h.clone();
        for t in 0..len {
            for o in 0..d_out {
                let mut acc = conv.bias[o];
                for tap in 0..k {
                    let src = t as isize + tap as isize - half;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..h[0].len() {
                        acc += h[src as usize][i] * conv.weight[[tap, i, o]];
                    }
                }
                out[t][o] = h[t][o] + gelu(acc);
            }
        }
        h = out;
    }
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    for blk in &w.blocks {
        let a = layer_norm(&h, &blk.ln1.gain, &blk.ln1.bias);
        let q = matmul_bias(&a, &blk.q.weight, &blk.q.bias);
        let k = matmul_bias(&a, &blk.k.weight, &blk.k.bias);
        let v = matmul_bias(&a, &blk.v.weight, &blk.v.bias);
        let mut attn = vec![vec![0.0; d]; len];
        for head in 0..cfg.n_heads {
            let c0 = head * dh;
            for i in 0..len {
                let scores: Vec<f64> = (0..len)
                    .map(|j| (0..dh).map(|c| q[i][c0 + c] * k[j][c0 + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    attn[i][c0 + c] = (0..len).map(|j| e[j] / z * v[j][c0 + c]).sum();
                }
            }
        }
        let h_mid = add(&h, &matmul_bias(&attn, &blk.o.weight, &blk.o.bias));
        let b = layer_norm(&h_mid, &blk.ln2.gain, &blk.ln2.bias);
        let f: Mat = matmul_bias(&b, &blk.ff1.weight, &blk.ff1.bias)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        h = add(&h_mid, &matmul_bias(&f, &blk.ff2.weight, &blk.ff2.bias));
    }
    let last = vec![h[len - 1].clone()];
    matmul_bias(&last, &w.head.weight, &w.head.bias).remove(0)
}

/// Central finite differences of `f` at every coordinate of `point`.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            p[i] = point[i] + h;
            let up = f(&p);
            p[i] = point[i] - h;
            let down = f(&p);
            p[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn to_mat(x: &ndarray::Array2<f64>) -> Mat {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}
