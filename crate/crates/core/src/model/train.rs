//! Training loop: AdamW, linear warmup into a cosine decay, global-norm
//! clipping, gradient accumulation, per-epoch checkpoints and early stopping
//! on validation loss.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fusion::{backward, forward, weighted_ce, Sample};
use super::{FusionConfig, ModelParams, ParamGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Kept for a trainable backbone; the stub has no parameters.
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub lr_stats_head: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub grad_accum: usize,
    pub lambda_cls: f64,
    pub lambda_lm: f64,
    pub lambda_contr: f64,
    /// `None`: inverse-frequency weights from the training labels.
    pub class_weights: Option<Vec<f64>>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_backbone: 5e-5,
            lr_heads: 5e-5,
            lr_stats_head: 5e-4,
            weight_decay: 0.05,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            epochs: 7,
            grad_accum: 8,
            lambda_cls: 1.0,
            lambda_lm: 0.0,
            lambda_contr: 0.0,
            class_weights: None,
            patience: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_lm != 0.0 {
            return Err(Error::Contract("lambda_lm must be 0: no language-model head is implemented".into()));
        }
        if self.grad_accum == 0 || self.epochs == 0 {
            return Err(Error::Validation("grad_accum and epochs must be positive".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Validation("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `w_c = N / (K · N_c)`; classes absent from `labels` get 1.
pub fn class_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { n / (num_classes as f64 * c as f64) })
        .collect()
}

/// LR multiplier for 1-based optimizer step `step`: `step / warmup` during
/// warmup, then `½(1 + cos(π·progress))`, reaching 0 at `total`.
pub fn lr_multiplier(step: usize, warmup: usize, total: usize) -> f64 {
    if step <= warmup {
        return step as f64 / warmup.max(1) as f64;
    }
    let progress = (step - warmup) as f64 / (total - warmup).max(1) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Supervised contrastive loss over a batch of unit vectors; anchors without
/// a positive are skipped. Returns the loss and `∂L/∂z_i`.
pub fn supcon_loss(zs: &[ArrayView1<f64>], labels: &[usize], tau: f64) -> (f64, Vec<Array1<f64>>) {
    let n = zs.len();
    let mut grads: Vec<Array1<f64>> = zs.iter().map(|z| Array1::zeros(z.len())).collect();
    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|p| p != i && labels[p] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return (0.0, grads);
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut total = 0.0;
    for &i in &anchors {
        let others: Vec<usize> = (0..n).filter(|&a| a != i).collect();
        let sims: Vec<f64> = others.iter().map(|&a| zs[i].dot(&zs[a]) / tau).collect();
        let m = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + sims.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        let positives = others.iter().filter(|&&a| labels[a] == labels[i]).count() as f64;
        for (k, &a) in others.iter().enumerate() {
            let q = (sims[k] - lse).exp();
            let is_pos = labels[a] == labels[i];
            if is_pos {
                total -= (sims[k] - lse) / positives;
            }
            let ds = scale * (q - if is_pos { 1.0 / positives } else { 0.0 });
            grads[i].scaled_add(ds / tau, &zs[a]);
            grads[a].scaled_add(ds / tau, &zs[i]);
        }
    }
    (total * scale, grads)
}

/// Mean loss and mean gradient over `batch`. Samples run in parallel; the
/// reduction is sequential in batch order.
pub fn accumulate_gradients(
    params: &ModelParams,
    cfg: &FusionConfig,
    tc: &TrainConfig,
    batch: &[&Sample],
    weights: &[f64],
) -> Result<(f64, ModelParams)> {
    tc.validate()?;
    let b = batch.len() as f64;
    let fwds: Vec<_> = batch.par_iter().map(|s| forward(params, cfg, s)).collect::<Result<_>>()?;
    let mut loss = 0.0;
    let ce: Vec<(f64, Array1<f64>)> = batch
        .iter()
        .zip(&fwds)
        .map(|(s, f)| {
            let (l, d) = weighted_ce(f.logits(), s.label, weights);
            (l, d * (tc.lambda_cls / b))
        })
        .collect();
    loss += tc.lambda_cls * ce.iter().map(|c| c.0).sum::<f64>() / b;
    let dzs = if tc.lambda_contr != 0.0 {
        let zs: Vec<_> = fwds.iter().map(|f| f.z()).collect();
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let (l, g) = supcon_loss(&zs, &labels, cfg.tau);
        loss += tc.lambda_contr * l;
        Some(g.into_iter().map(|g| g * tc.lambda_contr).collect::<Vec<_>>())
    } else {
        None
    };
    let grads: Vec<ModelParams> = (0..batch.len())
        .into_par_iter()
        .map(|i| backward(params, cfg, batch[i], &fwds[i], &ce[i].1, dzs.as_ref().map(|d| &d[i])))
        .collect();
    let mut total = params.zeros_like();
    for g in &grads {
        total.axpy(1.0, g);
    }
    Ok((loss, total))
}

/// Mean weighted cross-entropy.
pub fn evaluate_loss(params: &ModelParams, cfg: &FusionConfig, samples: &[Sample], weights: &[f64]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| forward(params, cfg, s).map(|f| weighted_ce(f.logits(), s.label, weights).0))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// Arg-max label (lowest index on ties) and class probabilities.
pub fn predict(params: &ModelParams, cfg: &FusionConfig, sample: &Sample) -> Result<(usize, Array1<f64>)> {
    let probs = forward(params, cfg, sample)?.probabilities();
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
    Ok((best, probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
    pub class_weights: Vec<f64>,
}

/// Training failure; on divergence carries the last parameters whose loss
/// was finite.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub last_finite: Option<Box<ModelParams>>,
}

impl fmt::Display for FitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for FitFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure { error, last_finite: None }
    }
}

struct AdamW {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, lr_of: impl Fn(ParamGroup) -> f64, wd: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - Self::B1.powi(self.t), 1.0 - Self::B2.powi(self.t));
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((name, p), (_, _, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            let lr = lr_of(ModelParams::group_of(name));
            let decay = if ModelParams::decays(name) { 1.0 - lr * wd } else { 1.0 };
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] = p[i] * decay - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains from a seeded init. With `checkpoint_dir` set, writes
/// `epoch-<n>.ckpt` after every epoch, `best.ckpt` at the end, and
/// `last-finite.ckpt` on divergence.
pub fn fit(
    cfg: &FusionConfig,
    tc: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    checkpoint_dir: Option<&Path>,
) -> std::result::Result<Fitted, FitFailure> {
    tc.validate()?;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()).into());
    }
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.num_classes) {
        return Err(Error::Range(format!("label {bad} with {} classes", cfg.num_classes)).into());
    }
    let weights = tc.class_weights.clone().unwrap_or_else(|| class_weights(&labels, cfg.num_classes));
    if weights.len() != cfg.num_classes {
        return Err(Error::Validation(format!("{} class weights for {} classes", weights.len(), cfg.num_classes)).into());
    }

    let mut params = ModelParams::init(cfg, tc.seed)?;
    let mut opt = AdamW {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let per_epoch = train.len().div_ceil(tc.grad_accum);
    let total = per_epoch * tc.epochs;
    let warmup = ((tc.warmup_ratio * total as f64).ceil() as usize).clamp(1, total);
    let save = |p: &ModelParams, name: &str| -> Result<()> {
        if let Some(dir) = checkpoint_dir {
            p.to_checkpoint(cfg)?.save(&dir.join(name))?;
        }
        Ok(())
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut mult = 0.0;
        for chunk in order.chunks(tc.grad_accum) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grad) = accumulate_gradients(&params, cfg, tc, &batch, &weights)?;
            if !loss.is_finite() || !grad.is_finite() {
                let _ = save(&params, "last-finite.ckpt");
                return Err(FitFailure {
                    error: Error::Diverged { epoch, step: step + 1 },
                    last_finite: Some(Box::new(params)),
                });
            }
            let norm = grad.norm();
            if norm > tc.max_grad_norm {
                grad.scale(tc.max_grad_norm / norm);
            }
            step += 1;
            mult = lr_multiplier(step, warmup, total);
            let lr_of = |g: ParamGroup| match g {
                ParamGroup::Heads => tc.lr_heads * mult,
                ParamGroup::StatsHead => tc.lr_stats_head * mult,
            };
            opt.step(&mut params, &grad, lr_of, tc.weight_decay);
            loss_sum += loss * batch.len() as f64;
        }
        let val_loss = evaluate_loss(&params, cfg, val, &weights)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            lr: tc.lr_heads * mult,
        };
        tracing::info!(event = "epoch_done", epoch, train_loss = record.train_loss, val_loss);
        history.push(record);
        save(&params, &format!("epoch-{epoch}.ckpt"))?;
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    save(&best_params, "best.ckpt")?;
    Ok(Fitted {
        params: best_params,
        history,
        best_epoch,
        steps: step,
        class_weights: weights,
    })
}
