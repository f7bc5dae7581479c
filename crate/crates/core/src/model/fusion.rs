//! Forward and backward passes of the fusion model.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};

use super::ops::{
    attention, attention_backward, conv1d_same, conv1d_same_backward, gelu, gelu_grad, layer_norm,
    layer_norm_backward, linear_backward, log_sum_exp, softmax, Attention,
};
use super::{FusionConfig, ModelParams};
use crate::error::{Error, Result};
use crate::prosody::LogMel;

/// One argument's inputs: span token states (`n × d`), prosody rows
/// (`W × D_p`, possibly empty) and log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgInput {
    pub h: Array2<f64>,
    pub prosody: Array2<f64>,
    pub logmel: LogMel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub arg1: ArgInput,
    pub arg2: ArgInput,
    pub label: usize,
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

// ---------------------------------------------------------------- prosody attention

struct ProsodyCache {
    projected: Array2<f64>,
    attn: Option<Attention>,
    xhat: Array2<f64>,
    inv: Array1<f64>,
    pooled: Array1<f64>,
}

fn prosody_forward(hs: &Array2<f64>, prosody: &Array2<f64>, p: &ModelParams, cfg: &FusionConfig) -> Result<ProsodyCache> {
    if hs.nrows() == 0 {
        return Err(Error::Contract("empty argument span".into()));
    }
    let projected = prosody.dot(&p.prosody_proj);
    let use_prosody = cfg.ablation.prosody && prosody.nrows() > 0;
    let (r, attn) = if use_prosody {
        let a = attention(hs.view(), projected.view(), &p.pa_wq, &p.pa_wk, &p.pa_wv, cfg.attn_heads);
        (hs + &(&a.out * p.gamma[0]), Some(a))
    } else {
        (hs.clone(), None)
    };
    let (y, xhat, inv) = layer_norm(r.view(), &p.ln1_g, &p.ln1_b);
    let pooled = y.mean_axis(Axis(0)).expect("non-empty span");
    Ok(ProsodyCache {
        projected,
        attn,
        xhat,
        inv,
        pooled,
    })
}

fn prosody_backward(
    dh: &Array1<f64>,
    hs: &Array2<f64>,
    prosody: &Array2<f64>,
    c: &ProsodyCache,
    p: &ModelParams,
    g: &mut ModelParams,
) {
    let n = hs.nrows();
    let dy = Array2::from_shape_fn((n, dh.len()), |(_, j)| dh[j] / n as f64);
    let dr = layer_norm_backward(dy.view(), &c.xhat, &c.inv, &p.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    if let Some(a) = &c.attn {
        g.gamma[0] += (&dr * &a.out).sum();
        let dout = &dr * p.gamma[0];
        let (_, dproj) = attention_backward(
            a,
            dout.view(),
            hs.view(),
            c.projected.view(),
            &p.pa_wq,
            &p.pa_wk,
            &p.pa_wv,
            &mut g.pa_wq,
            &mut g.pa_wk,
            &mut g.pa_wv,
        );
        g.prosody_proj += &prosody.t().dot(&dproj);
    }
}

/// `h = mean_t LN₁(H_span + γ·Attn(H_span, P·W_p))`; with no prosody rows
/// (or prosody ablated) the attention term is absent.
pub fn prosody_attend_pool(
    h_span: &Array2<f64>,
    prosody: &Array2<f64>,
    params: &ModelParams,
    cfg: &FusionConfig,
) -> Result<Array1<f64>> {
    Ok(prosody_forward(h_span, prosody, params, cfg)?.pooled)
}

// ---------------------------------------------------------------- statistics pooling

struct StatsCache {
    mask: Array1<f64>,
    x0: Array2<f64>,
    y1: Array2<f64>,
    g1: Array2<f64>,
    y2: Array2<f64>,
    stats: Array1<f64>,
    n: f64,
    a: Array1<f64>,
}

fn stats_forward(lm: &LogMel, p: &ModelParams) -> Result<StatsCache> {
    let (f, t) = lm.frames.dim();
    if lm.mask.len() != t {
        return Err(Error::Contract(format!("mask has {} entries for {t} frames", lm.mask.len())));
    }
    if f != p.conv1_w.shape()[1] {
        return Err(Error::Contract(format!("log-mel has {f} bins, model expects {}", p.conv1_w.shape()[1])));
    }
    let mask = Array1::from_iter(lm.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    let n = mask.sum();
    if n == 0.0 {
        return Err(Error::EmptySegment);
    }
    let x0 = &lm.frames * &mask;
    let y1 = conv1d_same(x0.view(), &p.conv1_w, &p.conv1_b) * &mask;
    let g1 = y1.mapv(gelu);
    let y2 = conv1d_same(g1.view(), &p.conv2_w, &p.conv2_b) * &mask;
    let mu = y2.sum_axis(Axis(1)) / n;
    let centred = (&y2 - &mu.view().insert_axis(Axis(1))) * &mask;
    let sigma = ((&centred * &centred).sum_axis(Axis(1)) / n).mapv(f64::sqrt);
    let stats = concatenate![Axis(0), mu, sigma];
    let a = stats.dot(&p.stats_proj);
    Ok(StatsCache {
        mask,
        x0,
        y1,
        g1,
        y2,
        stats,
        n,
        a,
    })
}

fn stats_backward(da: &Array1<f64>, c: &StatsCache, p: &ModelParams, g: &mut ModelParams) {
    let ch = c.y2.nrows();
    g.stats_proj += &row(&c.stats).t().dot(&row(da));
    let ds = p.stats_proj.dot(da);
    let (mu, sigma) = (c.stats.slice(s![..ch]), c.stats.slice(s![ch..]));
    let mut dy2 = Array2::zeros(c.y2.dim());
    for k in 0..ch {
        let (dmu, dsig) = (ds[k], ds[ch + k]);
        for t in 0..c.y2.ncols() {
            if c.mask[t] == 0.0 {
                continue;
            }
            let mut v = dmu / c.n;
            if sigma[k] > 0.0 {
                v += dsig * (c.y2[[k, t]] - mu[k]) / (c.n * sigma[k]);
            }
            dy2[[k, t]] = v;
        }
    }
    let dg1 = conv1d_same_backward(c.g1.view(), &p.conv2_w, dy2.view(), &mut g.conv2_w, &mut g.conv2_b);
    let mut dy1 = dg1 * &c.y1.mapv(gelu_grad);
    dy1 *= &c.mask;
    conv1d_same_backward(c.x0.view(), &p.conv1_w, dy1.view(), &mut g.conv1_w, &mut g.conv1_b);
}

/// Masked mean and standard deviation of the conv features, `(μ, σ)`.
pub fn pooled_moments(logmel: &LogMel, params: &ModelParams) -> Result<(Array1<f64>, Array1<f64>)> {
    let c = stats_forward(logmel, params)?;
    let ch = c.y2.nrows();
    Ok((c.stats.slice(s![..ch]).to_owned(), c.stats.slice(s![ch..]).to_owned()))
}

/// `a = [μ; σ]·W_stats` over the unmasked frames.
pub fn stats_pool(logmel: &LogMel, params: &ModelParams) -> Result<Array1<f64>> {
    Ok(stats_forward(logmel, params)?.a)
}

/// `h̃ = LN₂(h + α·a)`.
pub fn fuse_audio(h: &Array1<f64>, a: &Array1<f64>, alpha: f64, params: &ModelParams) -> Array1<f64> {
    let x = row(&(h + &(a * alpha)));
    layer_norm(x.view(), &params.ln2_g, &params.ln2_b).0.row(0).to_owned()
}

// ---------------------------------------------------------------- per-argument

struct ArgCache {
    prosody: ProsodyCache,
    stats: Option<StatsCache>,
    xhat: Array2<f64>,
    inv: Array1<f64>,
    out: Array1<f64>,
}

fn arg_forward(arg: &ArgInput, p: &ModelParams, cfg: &FusionConfig) -> Result<ArgCache> {
    let prosody = prosody_forward(&arg.h, &arg.prosody, p, cfg)?;
    let stats = if cfg.ablation.audio_stats {
        Some(stats_forward(&arg.logmel, p)?)
    } else {
        None
    };
    let pre = match &stats {
        Some(st) => &prosody.pooled + &(&st.a * cfg.alpha),
        None => prosody.pooled.clone(),
    };
    let (y, xhat, inv) = layer_norm(row(&pre).view(), &p.ln2_g, &p.ln2_b);
    Ok(ArgCache {
        prosody,
        stats,
        xhat,
        inv,
        out: y.row(0).to_owned(),
    })
}

fn arg_backward(dout: &Array1<f64>, arg: &ArgInput, c: &ArgCache, p: &ModelParams, cfg: &FusionConfig, g: &mut ModelParams) {
    let dpre = layer_norm_backward(row(dout).view(), &c.xhat, &c.inv, &p.ln2_g, &mut g.ln2_g, &mut g.ln2_b)
        .row(0)
        .to_owned();
    if let Some(st) = &c.stats {
        stats_backward(&(&dpre * cfg.alpha), st, p, g);
    }
    prosody_backward(&dpre, &arg.h, &arg.prosody, &c.prosody, p, g);
}

// ---------------------------------------------------------------- pair fusion + head

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub z: Array1<f64>,
    pub logits: Array1<f64>,
}

struct PairCache {
    u_attn: Attention,
    v_attn: Attention,
    cat: Array2<f64>,
    m1: Array2<f64>,
    g: Array2<f64>,
    m2_norm: f64,
    z: Array2<f64>,
    c1: Array2<f64>,
    gc: Array2<f64>,
    logits: Array1<f64>,
}

fn pair_forward(h1: &Array1<f64>, h2: &Array1<f64>, p: &ModelParams, cfg: &FusionConfig) -> PairCache {
    let (r1, r2) = (row(h1), row(h2));
    let u_attn = attention(r1.view(), r2.view(), &p.pf_wq, &p.pf_wk, &p.pf_wv, cfg.attn_heads);
    let v_attn = attention(r2.view(), r1.view(), &p.pf_wq, &p.pf_wk, &p.pf_wv, cfg.attn_heads);
    let cat = concatenate![Axis(1), u_attn.out, v_attn.out];
    let m1 = cat.dot(&p.mlp_w1) + &p.mlp_b1;
    let g = m1.mapv(gelu);
    let m2 = g.dot(&p.mlp_w2) + &p.mlp_b2;
    let m2_norm = m2.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let z = &m2 / m2_norm;
    let c1 = z.dot(&p.cls_w1) + &p.cls_b1;
    let gc = c1.mapv(gelu);
    let logits = (gc.dot(&p.cls_w2) + &p.cls_b2).row(0).to_owned();
    PairCache {
        u_attn,
        v_attn,
        cat,
        m1,
        g,
        m2_norm,
        z,
        c1,
        gc,
        logits,
    }
}

fn pair_backward(
    dlogits: &Array1<f64>,
    dz_extra: Option<&Array1<f64>>,
    h1: &Array1<f64>,
    h2: &Array1<f64>,
    c: &PairCache,
    p: &ModelParams,
    g: &mut ModelParams,
) -> (Array1<f64>, Array1<f64>) {
    let dgc = linear_backward(c.gc.view(), p.cls_w2.view(), row(dlogits).view(), &mut g.cls_w2, Some(&mut g.cls_b2));
    let dc1 = dgc * &c.c1.mapv(gelu_grad);
    let mut dz = linear_backward(c.z.view(), p.cls_w1.view(), dc1.view(), &mut g.cls_w1, Some(&mut g.cls_b1));
    if let Some(extra) = dz_extra {
        dz += &row(extra);
    }
    // ℓ2 normalization: dm = (dz - z(z·dz)) / ‖m‖
    let zdz = (&dz * &c.z).sum();
    let dm2 = (&dz - &(&c.z * zdz)) / c.m2_norm;
    let dg = linear_backward(c.g.view(), p.mlp_w2.view(), dm2.view(), &mut g.mlp_w2, Some(&mut g.mlp_b2));
    let dm1 = dg * &c.m1.mapv(gelu_grad);
    let dcat = linear_backward(c.cat.view(), p.mlp_w1.view(), dm1.view(), &mut g.mlp_w1, Some(&mut g.mlp_b1));
    let pd = p.pf_wv.ncols();
    let (du, dv) = (dcat.slice(s![.., ..pd]), dcat.slice(s![.., pd..]));
    let (r1, r2) = (row(h1), row(h2));
    let (dq1, dk2) = attention_backward(
        &c.u_attn, du, r1.view(), r2.view(), &p.pf_wq, &p.pf_wk, &p.pf_wv, &mut g.pf_wq, &mut g.pf_wk, &mut g.pf_wv,
    );
    let (dq2, dk1) = attention_backward(
        &c.v_attn, dv, r2.view(), r1.view(), &p.pf_wq, &p.pf_wk, &p.pf_wv, &mut g.pf_wq, &mut g.pf_wk, &mut g.pf_wv,
    );
    ((dq1 + dk1).row(0).to_owned(), (dq2 + dk2).row(0).to_owned())
}

/// `u` = h̃₁ attending over h̃₂, `v` = h̃₂ over h̃₁; `z = ℓ2(MLP([u; v]))`.
pub fn pair_fuse_classify(h1: &Array1<f64>, h2: &Array1<f64>, params: &ModelParams, cfg: &FusionConfig) -> PairOutput {
    let c = pair_forward(h1, h2, params, cfg);
    PairOutput {
        u: c.u_attn.out.row(0).to_owned(),
        v: c.v_attn.out.row(0).to_owned(),
        z: c.z.row(0).to_owned(),
        logits: c.logits,
    }
}

// ---------------------------------------------------------------- whole model

/// Saved activations of one sample's forward pass.
pub struct Forward {
    arg1: ArgCache,
    arg2: ArgCache,
    pair: PairCache,
}

impl Forward {
    pub fn logits(&self) -> &Array1<f64> {
        &self.pair.logits
    }

    pub fn z(&self) -> ArrayView1<'_, f64> {
        self.pair.z.row(0)
    }

    pub fn probabilities(&self) -> Array1<f64> {
        softmax(self.pair.logits.view())
    }

    /// Fused argument vectors `(h̃₁, h̃₂)`.
    pub fn fused(&self) -> (&Array1<f64>, &Array1<f64>) {
        (&self.arg1.out, &self.arg2.out)
    }
}

pub fn forward(params: &ModelParams, cfg: &FusionConfig, sample: &Sample) -> Result<Forward> {
    let arg1 = arg_forward(&sample.arg1, params, cfg)?;
    let arg2 = arg_forward(&sample.arg2, params, cfg)?;
    let pair = pair_forward(&arg1.out, &arg2.out, params, cfg);
    Ok(Forward { arg1, arg2, pair })
}

/// Gradients of all parameters given upstream gradients for the logits and,
/// optionally, for `z` (contrastive term).
pub fn backward(
    params: &ModelParams,
    cfg: &FusionConfig,
    sample: &Sample,
    fwd: &Forward,
    dlogits: &Array1<f64>,
    dz: Option<&Array1<f64>>,
) -> ModelParams {
    let mut g = params.zeros_like();
    let (d1, d2) = pair_backward(dlogits, dz, &fwd.arg1.out, &fwd.arg2.out, &fwd.pair, params, &mut g);
    arg_backward(&d1, &sample.arg1, &fwd.arg1, params, cfg, &mut g);
    arg_backward(&d2, &sample.arg2, &fwd.arg2, params, cfg, &mut g);
    g
}

/// `w_y · (−log softmax(logits)_y)` and its gradient with respect to the logits.
pub fn weighted_ce(logits: &Array1<f64>, label: usize, class_weights: &[f64]) -> (f64, Array1<f64>) {
    let w = class_weights[label];
    let loss = w * (log_sum_exp(logits.view()) - logits[label]);
    let mut grad = softmax(logits.view());
    grad[label] -= 1.0;
    (loss, grad * w)
}

pub fn loss_and_grad(
    params: &ModelParams,
    cfg: &FusionConfig,
    sample: &Sample,
    class_weights: &[f64],
) -> Result<(f64, ModelParams)> {
    if sample.label >= cfg.num_classes {
        return Err(Error::Range(format!("label {} with {} classes", sample.label, cfg.num_classes)));
    }
    let fwd = forward(params, cfg, sample)?;
    let (loss, dlogits) = weighted_ce(fwd.logits(), sample.label, class_weights);
    Ok((loss, backward(params, cfg, sample, &fwd, &dlogits, None)))
}
