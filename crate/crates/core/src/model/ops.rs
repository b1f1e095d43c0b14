//! Elementwise and row-wise kernels with their derivatives.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub const LN_EPS: f64 = 1e-5;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Max-subtracted softmax.
pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = z.to_owned();
    softmax_inplace(out.view_mut());
    out
}

pub fn softmax_inplace(mut z: ArrayViewMut1<'_, f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    z.mapv_inplace(|v| {
        let e = (v - max).exp();
        sum += e;
        e
    });
    z.mapv_inplace(|v| v / sum);
}

pub fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for row in m.axis_iter_mut(Axis(0)) {
        softmax_inplace(row);
    }
}

/// Saved per-row statistics for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| (v - mean) * rs);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates into `dgain` / `dbias`.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &rs) in dx.axis_iter_mut(Axis(0)).zip(cache.xhat.axis_iter(Axis(0))).zip(cache.rstd.iter()) {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xhat) / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| *g = rs * (*g - mean_g - xh * mean_gx));
    }
    dx
}
