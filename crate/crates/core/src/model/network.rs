//! Forward pass with a saved trace, and the matching reverse pass.
//!
//! Only the last sequence position feeds the classifier, so the final encoder
//! block computes its query-side work (attention rows, output projection,
//! feed-forward) for that position alone. Keys and values still span the
//! whole sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, softmax, softmax_rows_inplace, LnCache};
use super::weights::{Conv1d, EncoderBlock, Linear, ModelWeights};
use super::{ModelConfig, ModelError};

/// Added inside the log of the cross-entropy.
pub const CE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct BlockTrace {
    q0: usize,
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    cpe_pre: Vec<Array2<f64>>,
    cpe_out: Vec<Array2<f64>>,
    cnn_in: Vec<Array2<f64>>,
    cnn_pre: Vec<Array2<f64>>,
    blocks: Vec<BlockTrace>,
    /// Representation of the last position, as fed to the classifier.
    pub readout: Array1<f64>,
    pub logits: Array1<f64>,
}

fn affine(x: &ArrayView2<'_, f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.weight) + &l.bias
}

fn check_input(cfg: &ModelConfig, w: &ModelWeights, x: &Array2<f64>) -> Result<(), ModelError> {
    if x.ncols() != cfg.feature_width {
        return Err(ModelError::ShapeMismatch(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            cfg.feature_width
        )));
    }
    if x.nrows() == 0 || x.nrows() > cfg.max_seq_len {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence length {} outside 1..={}",
            x.nrows(),
            cfg.max_seq_len
        )));
    }
    if w.cpe.len() != cfg.n_cpe_layers
        || w.cnn.len() != cfg.n_cnn_layers
        || w.blocks.len() != cfg.n_transformer_layers
        || w.head.weight.dim() != (cfg.d_model, cfg.n_classes)
        || w.cpe[0].weight.nrows() != cfg.feature_width
    {
        return Err(ModelError::ShapeMismatch("weights do not match model config".into()));
    }
    Ok(())
}

/// Rows `t0..t1` of the output read rows shifted by `off` of the input.
fn conv_taps(len: usize, kernel: usize) -> impl Iterator<Item = (usize, isize, usize, usize)> {
    let half = (kernel / 2) as isize;
    (0..kernel).filter_map(move |k| {
        let off = k as isize - half;
        let t0 = (-off).max(0) as usize;
        let t1 = (len as isize - off).min(len as isize).max(0) as usize;
        (t0 < t1).then_some((k, off, t0, t1))
    })
}

fn conv_forward(c: &Conv1d, h: &Array2<f64>) -> Array2<f64> {
    let len = h.nrows();
    let mut pre = Array2::zeros((len, c.bias.len())) + &c.bias;
    for (k, off, t0, t1) in conv_taps(len, c.weight.len_of(Axis(0))) {
        let src = h.slice(s![(t0 as isize + off) as usize..(t1 as isize + off) as usize, ..]);
        let mut dst = pre.slice_mut(s![t0..t1, ..]);
        general_mat_mul(1.0, &src, &c.weight.index_axis(Axis(0), k), 1.0, &mut dst);
    }
    pre
}

fn conv_backward(c: &Conv1d, h: &Array2<f64>, d_pre: &Array2<f64>, g: &mut Conv1d) -> Array2<f64> {
    let len = h.nrows();
    let mut dh = Array2::zeros(h.raw_dim());
    g.bias += &d_pre.sum_axis(Axis(0));
    for (k, off, t0, t1) in conv_taps(len, c.weight.len_of(Axis(0))) {
        let rows = (t0 as isize + off) as usize..(t1 as isize + off) as usize;
        let src = h.slice(s![rows.clone(), ..]);
        let dp = d_pre.slice(s![t0..t1, ..]);
        let mut gk = g.weight.index_axis_mut(Axis(0), k);
        general_mat_mul(1.0, &src.t(), &dp, 1.0, &mut gk);
        let mut dst = dh.slice_mut(s![rows, ..]);
        general_mat_mul(1.0, &dp, &c.weight.index_axis(Axis(0), k).t(), 1.0, &mut dst);
    }
    dh
}

fn block_forward(blk: &EncoderBlock, h: &Array2<f64>, q0: usize, n_heads: usize) -> (Array2<f64>, BlockTrace) {
    let len = h.nrows();
    let d = h.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = layer_norm(h, &blk.ln1.gain, &blk.ln1.bias);
    let q = affine(&a.slice(s![q0.., ..]), &blk.q);
    let k = affine(&a.view(), &blk.k);
    let v = affine(&a.view(), &blk.v);

    let lq = len - q0;
    let mut attn = Array2::zeros((lq, d));
    let mut probs = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let cols = s![.., head * dh..(head + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        p *= scale;
        softmax_rows_inplace(&mut p);
        general_mat_mul(1.0, &p, &v.slice(cols), 0.0, &mut attn.slice_mut(cols));
        probs.push(p);
    }
    let h_mid = &h.slice(s![q0.., ..]) + &affine(&attn.view(), &blk.o);
    let (b, ln2) = layer_norm(&h_mid, &blk.ln2.gain, &blk.ln2.bias);
    let ff_pre = affine(&b.view(), &blk.ff1);
    let ff_act = ff_pre.mapv(gelu);
    let out = &h_mid + &affine(&ff_act.view(), &blk.ff2);
    (out, BlockTrace { q0, ln1, a, q, k, v, probs, attn, ln2, b, ff_pre, ff_act })
}

fn linear_backward(x: &ArrayView2<'_, f64>, dy: &Array2<f64>, l: &Linear, g: &mut Linear) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.weight);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

fn block_backward(blk: &EncoderBlock, t: &BlockTrace, d_out: &Array2<f64>, g: &mut EncoderBlock) -> Array2<f64> {
    let len = t.a.nrows();
    let d = t.a.ncols();
    let n_heads = t.probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward branch
    let mut d_ff = linear_backward(&t.ff_act.view(), d_out, &blk.ff2, &mut g.ff2);
    Zip::from(&mut d_ff).and(&t.ff_pre).for_each(|dv, &x| *dv *= gelu_grad(x));
    let d_b = linear_backward(&t.b.view(), &d_ff, &blk.ff1, &mut g.ff1);
    let d_mid = d_out + &layer_norm_backward(&d_b, &t.ln2, &blk.ln2.gain, &mut g.ln2.gain, &mut g.ln2.bias);

    // attention branch
    let d_attn = linear_backward(&t.attn.view(), &d_mid, &blk.o, &mut g.o);
    let mut dq = Array2::zeros(t.q.raw_dim());
    let mut dk = Array2::zeros(t.k.raw_dim());
    let mut dv = Array2::zeros(t.v.raw_dim());
    for (head, p) in t.probs.iter().enumerate() {
        let cols = s![.., head * dh..(head + 1) * dh];
        let da = d_attn.slice(cols);
        general_mat_mul(1.0, &p.t(), &da, 0.0, &mut dv.slice_mut(cols));
        let mut ds = da.dot(&t.v.slice(cols).t());
        for (mut ds_row, p_row) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
            let dot = ds_row.dot(&p_row);
            Zip::from(&mut ds_row).and(&p_row).for_each(|g, &pv| *g = pv * (*g - dot) * scale);
        }
        general_mat_mul(1.0, &ds, &t.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(1.0, &ds.t(), &t.q.slice(cols), 0.0, &mut dk.slice_mut(cols));
    }
    let mut d_a = linear_backward(&t.a.view(), &dk, &blk.k, &mut g.k);
    d_a += &linear_backward(&t.a.view(), &dv, &blk.v, &mut g.v);
    let dq_in = linear_backward(&t.a.slice(s![t.q0.., ..]), &dq, &blk.q, &mut g.q);
    d_a.slice_mut(s![t.q0.., ..]).zip_mut_with(&dq_in, |x, &y| *x += y);

    let mut d_h = layer_norm_backward(&d_a, &t.ln1, &blk.ln1.gain, &mut g.ln1.gain, &mut g.ln1.bias);
    debug_assert_eq!(d_h.nrows(), len);
    d_h.slice_mut(s![t.q0.., ..]).zip_mut_with(&d_mid, |x, &y| *x += y);
    d_h
}

/// Run the network and keep every intermediate needed by [`backward`].
pub fn forward_trace(cfg: &ModelConfig, w: &ModelWeights, x: &Array2<f64>) -> Result<ForwardTrace, ModelError> {
    check_input(cfg, w, x)?;
    let len = x.nrows();

    let mut cpe_pre = Vec::with_capacity(w.cpe.len());
    let mut cpe_out: Vec<Array2<f64>> = Vec::with_capacity(w.cpe.len());
    for layer in &w.cpe {
        let input = cpe_out.last().map_or(x.view(), |h| h.view());
        let pre = affine(&input, layer);
        cpe_out.push(pre.mapv(gelu));
        cpe_pre.push(pre);
    }
    let mut h = cpe_out.last().expect("at least one embedding layer").clone();

    let mut cnn_in = Vec::with_capacity(w.cnn.len());
    let mut cnn_pre = Vec::with_capacity(w.cnn.len());
    for conv in &w.cnn {
        let pre = conv_forward(conv, &h);
        let out = &h + &pre.mapv(gelu);
        cnn_in.push(std::mem::replace(&mut h, out));
        cnn_pre.push(pre);
    }

    let mut blocks = Vec::with_capacity(w.blocks.len());
    let n_blocks = w.blocks.len();
    for (i, blk) in w.blocks.iter().enumerate() {
        let q0 = if i + 1 == n_blocks { len - 1 } else { 0 };
        let (out, trace) = block_forward(blk, &h, q0, cfg.n_heads);
        h = out;
        blocks.push(trace);
    }

    let readout = h.row(h.nrows() - 1).to_owned();
    let logits = readout.dot(&w.head.weight) + &w.head.bias;
    Ok(ForwardTrace { cpe_pre, cpe_out, cnn_in, cnn_pre, blocks, readout, logits })
}

/// Class logits for the last position of `x`.
pub fn forward(cfg: &ModelConfig, w: &ModelWeights, x: &Array2<f64>) -> Result<Array1<f64>, ModelError> {
    Ok(forward_trace(cfg, w, x)?.logits)
}

fn check_label(cfg: &ModelConfig, label: usize, class_weights: &[f64]) -> Result<(), ModelError> {
    if label >= cfg.n_classes {
        return Err(ModelError::InvalidLabel { label, n_classes: cfg.n_classes });
    }
    if class_weights.len() != cfg.n_classes {
        return Err(ModelError::ShapeMismatch(format!(
            "{} class weights for {} classes",
            class_weights.len(),
            cfg.n_classes
        )));
    }
    Ok(())
}

/// Weighted cross-entropy of the forward pass, and the logits it came from.
pub fn loss_and_logits(
    cfg: &ModelConfig,
    w: &ModelWeights,
    x: &Array2<f64>,
    label: usize,
    class_weights: &[f64],
) -> Result<(f64, Array1<f64>), ModelError> {
    check_label(cfg, label, class_weights)?;
    let logits = forward(cfg, w, x)?;
    let probs = softmax(logits.view());
    Ok((-class_weights[label] * (probs[label] + CE_EPS).ln(), logits))
}

/// Loss and exact gradient of the weighted cross-entropy with respect to every weight.
pub fn backward(
    cfg: &ModelConfig,
    w: &ModelWeights,
    x: &Array2<f64>,
    label: usize,
    class_weights: &[f64],
) -> Result<(f64, ModelWeights), ModelError> {
    check_label(cfg, label, class_weights)?;
    let trace = forward_trace(cfg, w, x)?;
    let len = x.nrows();
    let probs = softmax(trace.logits.view());
    let wy = class_weights[label];
    let py = probs[label];
    let loss = -wy * (py + CE_EPS).ln();

    // d(-w ln(p_y + eps)) / dz_j = -w p_y / (p_y + eps) * (1[j = y] - p_j)
    let coef = -wy * py / (py + CE_EPS);
    let d_logits = Array1::from_shape_fn(cfg.n_classes, |j| coef * (f64::from(u8::from(j == label)) - probs[j]));

    let mut g = w.zeros_like();
    g.head.bias += &d_logits;
    for (i, &r) in trace.readout.iter().enumerate() {
        g.head.weight.row_mut(i).scaled_add(r, &d_logits);
    }
    let d_readout = w.head.weight.dot(&d_logits);

    let mut d_h = match w.blocks.len() {
        0 => {
            let mut d = Array2::zeros((len, cfg.d_model));
            d.row_mut(len - 1).assign(&d_readout);
            d
        }
        _ => d_readout.insert_axis(Axis(0)),
    };
    for ((blk, t), gb) in w.blocks.iter().zip(&trace.blocks).zip(g.blocks.iter_mut()).rev() {
        d_h = block_backward(blk, t, &d_h, gb);
    }

    for (((conv, h_in), pre), gc) in w.cnn.iter().zip(&trace.cnn_in).zip(&trace.cnn_pre).zip(g.cnn.iter_mut()).rev() {
        let mut d_pre = d_h.clone();
        Zip::from(&mut d_pre).and(pre).for_each(|dv, &p| *dv *= gelu_grad(p));
        d_h += &conv_backward(conv, h_in, &d_pre, gc);
    }

    for i in (0..w.cpe.len()).rev() {
        let mut d_pre = d_h;
        Zip::from(&mut d_pre).and(&trace.cpe_pre[i]).for_each(|dv, &p| *dv *= gelu_grad(p));
        let input = if i == 0 { x.view() } else { trace.cpe_out[i - 1].view() };
        general_mat_mul(1.0, &input.t(), &d_pre, 1.0, &mut g.cpe[i].weight);
        g.cpe[i].bias += &d_pre.sum_axis(Axis(0));
        d_h = if i == 0 { d_pre } else { d_pre.dot(&w.cpe[i].weight.t()) };
    }
    Ok((loss, g))
}
