//! Differentiable primitives with hand-written backward passes.
//!
//! Convention: activations are row vectors, so a linear map is `y = x·W + b`
//! with `W` stored `in × out`. Backward functions accumulate into the
//! gradient buffers they are handed (`+=`), which is what lets the same
//! parameter appear twice in a forward pass.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------- GELU

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

// ---------------------------------------------------------------- softmax

pub fn softmax(xs: ArrayView1<f64>) -> Array1<f64> {
    let m = xs.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = xs.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

pub fn log_sum_exp(xs: ArrayView1<f64>) -> f64 {
    let m = xs.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------- linear

/// dX = dY·Wᵀ; dW += Xᵀ·dY; db += Σ rows dY.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    dw: &mut Array2<f64>,
    db: Option<&mut Array1<f64>>,
) -> Array2<f64> {
    *dw += &x.t().dot(&dy);
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

// ---------------------------------------------------------------- layer norm

/// Row-wise layer norm. Returns `(y, xhat, inv_std)`.
pub fn layer_norm(x: ArrayView2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, iv) in xhat.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mu = row.sum() / d;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
        *iv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mu) * *iv);
    }
    let y = &xhat * g + b;
    (y, xhat, inv)
}

pub fn layer_norm_backward(
    dy: ArrayView2<f64>,
    xhat: &Array2<f64>,
    inv: &Array1<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(&dy * xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = xhat.ncols() as f64;
    let mut dx = &dy * g;
    for ((mut row, xh), iv) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
        let m1 = row.sum() / d;
        let m2 = row.dot(&xh) / d;
        Zip::from(&mut row).and(&xh).for_each(|r, &h| *r = iv * (*r - m1 - h * m2));
    }
    dx
}

// ---------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention without an output projection.
/// Queries come from `xq`, keys and values from `xk`.
pub struct Attention {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head `n × m` weight matrices; rows sum to one.
    pub weights: Vec<Array2<f64>>,
    pub out: Array2<f64>,
}

pub fn attention(
    xq: ArrayView2<f64>,
    xk: ArrayView2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    heads: usize,
) -> Attention {
    let q = xq.dot(wq);
    let k = xk.dot(wk);
    let v = xk.dot(wv);
    let width = q.ncols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), width));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for mut row in a.rows_mut() {
            let p = softmax(row.view());
            row.assign(&p);
        }
        out.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        weights.push(a);
    }
    Attention { q, k, v, weights, out }
}

/// Returns `(dxq, dxk)` and accumulates into the weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    cache: &Attention,
    dout: ArrayView2<f64>,
    xq: ArrayView2<f64>,
    xk: ArrayView2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    dwq: &mut Array2<f64>,
    dwk: &mut Array2<f64>,
    dwv: &mut Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let heads = cache.weights.len();
    let width = cache.q.ncols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for (h, a) in cache.weights.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout_h = dout.slice(cols);
        let da = dout_h.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dout_h));
        // softmax backward, row by row
        let mut ds = &da * a;
        for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let tot = row.sum();
            Zip::from(&mut row).and(&arow).for_each(|r, &p| *r -= p * tot);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    *dwq += &xq.t().dot(&dq);
    *dwk += &xk.t().dot(&dk);
    *dwv += &xk.t().dot(&dv);
    let dxq = dq.dot(&wq.t());
    let dxk = dk.dot(&wk.t()) + dv.dot(&wv.t());
    (dxq, dxk)
}

// ---------------------------------------------------------------- conv1d

/// Same-padded kernel-3 convolution over time. `x` is `C_in × T`,
/// `w` is `C_out × C_in × 3`; tap `k` reads `x[:, t + k - 1]`.
pub fn conv1d_same(x: ArrayView2<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    let t = x.ncols();
    let mut y = Array2::zeros((w.shape()[0], t));
    for mut col in y.columns_mut() {
        col.assign(b);
    }
    let w0 = w.index_axis(Axis(2), 0);
    let w1 = w.index_axis(Axis(2), 1);
    let w2 = w.index_axis(Axis(2), 2);
    y += &w1.dot(&x);
    if t > 1 {
        let left = w0.dot(&x.slice(s![.., ..t - 1]));
        let mut tail = y.slice_mut(s![.., 1..]);
        tail += &left;
        let right = w2.dot(&x.slice(s![.., 1..]));
        let mut head = y.slice_mut(s![.., ..t - 1]);
        head += &right;
    }
    y
}

pub fn conv1d_same_backward(
    x: ArrayView2<f64>,
    w: &Array3<f64>,
    dy: ArrayView2<f64>,
    dw: &mut Array3<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let t = x.ncols();
    *db += &dy.sum_axis(Axis(1));
    let mut dx = w.index_axis(Axis(2), 1).t().dot(&dy);
    {
        let mut d1 = dw.index_axis_mut(Axis(2), 1);
        d1 += &dy.dot(&x.t());
    }
    if t > 1 {
        // tap 0: y[:, t] uses x[:, t-1]
        let dy_tail = dy.slice(s![.., 1..]);
        let x_head = x.slice(s![.., ..t - 1]);
        {
            let mut d0 = dw.index_axis_mut(Axis(2), 0);
            d0 += &dy_tail.dot(&x_head.t());
        }
        let g0 = w.index_axis(Axis(2), 0).t().dot(&dy_tail);
        let mut dxh = dx.slice_mut(s![.., ..t - 1]);
        dxh += &g0;
        // tap 2: y[:, t] uses x[:, t+1]
        let dy_head = dy.slice(s![.., ..t - 1]);
        let x_tail = x.slice(s![.., 1..]);
        {
            let mut d2 = dw.index_axis_mut(Axis(2), 2);
            d2 += &dy_head.dot(&x_tail.t());
        }
        let g2 = w.index_axis(Axis(2), 2).t().dot(&dy_head);
        let mut dxt = dx.slice_mut(s![.., 1..]);
        dxt += &g2;
    }
    dx
}
