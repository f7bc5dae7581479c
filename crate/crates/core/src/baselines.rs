//! Non-pretrained baselines: TF-IDF + logistic regression on the argument
//! texts, aggregated prosody + logistic regression, and both concatenated.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::ops::{log_sum_exp, softmax};
use crate::prosody::{ProsodyMatrix, PROSODY_DIM};

/// Lowercased Unicode words; no stemming.
pub fn tfidf_tokens(doc: &str) -> Vec<String> {
    doc.unicode_words().map(str::to_lowercase).collect()
}

/// Raw-count tf, smoothed idf `ln((1+N)/(1+df)) + 1`, optional L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub norm: bool,
}

impl TfidfModel {
    pub fn fit(docs: &[&str]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Validation("no documents to fit TF-IDF on".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<String> = tfidf_tokens(d);
            seen.sort();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(Error::Validation("empty TF-IDF vocabulary".into()));
        }
        let n = docs.len() as f64;
        let vocabulary = df.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let idf = df.values().map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0).collect();
        Ok(TfidfModel {
            vocabulary,
            idf,
            norm: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Raw term counts over the vocabulary; unknown terms are ignored.
    pub fn term_counts(&self, doc: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for t in tfidf_tokens(doc) {
            if let Some(&i) = self.vocabulary.get(&t) {
                v[i] += 1.0;
            }
        }
        v
    }

    pub fn transform(&self, doc: &str) -> Vec<f64> {
        let mut v = self.term_counts(doc);
        v.iter_mut().zip(&self.idf).for_each(|(x, w)| *x *= w);
        if self.norm {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
        v
    }
}

pub fn tfidf_fit_transform(docs: &[&str]) -> Result<(TfidfModel, Vec<Vec<f64>>)> {
    let m = TfidfModel::fit(docs)?;
    let vs = docs.iter().map(|d| m.transform(d)).collect();
    Ok((m, vs))
}

/// Arg1 and Arg2 vectorized by separate models, then concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTfidf {
    pub arg1: TfidfModel,
    pub arg2: TfidfModel,
}

impl PairTfidf {
    pub fn fit(pairs: &[(&str, &str)]) -> Result<Self> {
        let a1: Vec<&str> = pairs.iter().map(|p| p.0).collect();
        let a2: Vec<&str> = pairs.iter().map(|p| p.1).collect();
        Ok(PairTfidf {
            arg1: TfidfModel::fit(&a1)?,
            arg2: TfidfModel::fit(&a2)?,
        })
    }

    pub fn transform(&self, arg1: &str, arg2: &str) -> Vec<f64> {
        let mut v = self.arg1.transform(arg1);
        v.extend(self.arg2.transform(arg2));
        v
    }
}

// ---------------------------------------------------------------- logistic regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub reg_lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            reg_lambda: 1e-2,
            tol: 1e-6,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// classes × features
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub reg_lambda: f64,
}

/// Result of a fit: the model and the objective after every accepted step.
#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub model: LogRegModel,
    pub objective: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
}

/// `(1/N) Σ w_{y_i} CE_i + (λ/2)‖W‖²` and its gradient; the bias is not penalized.
fn objective(
    x: &Array2<f64>,
    y: &[usize],
    sw: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    lambda: f64,
    want_grad: bool,
) -> (f64, Option<(Array2<f64>, Array1<f64>)>) {
    let n = x.nrows() as f64;
    let logits = x.dot(&w.t()) + b;
    let mut loss = 0.0;
    let mut dlog = Array2::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        loss += sw[i] * (log_sum_exp(row) - row[y[i]]);
        if want_grad {
            let mut p = softmax(row);
            p[y[i]] -= 1.0;
            dlog.row_mut(i).assign(&(p * (sw[i] / n)));
        }
    }
    let value = loss / n + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    if !want_grad {
        return (value, None);
    }
    let gw = dlog.t().dot(x) + w * lambda;
    let gb = dlog.sum_axis(Axis(0));
    (value, Some((gw, gb)))
}

impl LogRegModel {
    pub fn zeros(classes: usize, features: usize, reg_lambda: f64) -> Self {
        LogRegModel {
            weights: Array2::zeros((classes, features)),
            bias: Array1::zeros(classes),
            reg_lambda,
        }
    }

    /// Full-batch gradient descent with Armijo backtracking, starting from
    /// `self`, until the gradient norm drops below `cfg.tol`.
    pub fn fit_from(mut self, x: &Array2<f64>, y: &[usize], class_weights: &[f64], cfg: &LogRegConfig) -> Result<LogRegFit> {
        let k = self.weights.nrows();
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(Error::Validation("feature rows and labels differ in length (or are empty)".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= k) {
            return Err(Error::Range(format!("label {bad} with {k} classes")));
        }
        let sw = Array1::from_iter(y.iter().map(|&l| class_weights[l]));
        let lambda = cfg.reg_lambda;
        self.reg_lambda = lambda;
        let (mut f, g) = objective(x, y, &sw, &self.weights, &self.bias, lambda, true);
        let (mut gw, mut gb) = g.expect("gradient requested");
        let mut history = vec![f];
        let mut step = 1.0;
        let mut gnorm2 = gw.iter().chain(gb.iter()).map(|v| v * v).sum::<f64>();
        let mut iters = 0;
        while gnorm2.sqrt() >= cfg.tol && iters < cfg.max_iter {
            iters += 1;
            step *= 2.0;
            loop {
                let nw = &self.weights - &(&gw * step);
                let nb = &self.bias - &(&gb * step);
                let (nf, _) = objective(x, y, &sw, &nw, &nb, lambda, false);
                if nf <= f - 1e-4 * step * gnorm2 {
                    self.weights = nw;
                    self.bias = nb;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    // no descent possible at machine precision
                    return Ok(LogRegFit {
                        model: self,
                        objective: history,
                        grad_norm: gnorm2.sqrt(),
                        converged: false,
                    });
                }
            }
            let (nf, g) = objective(x, y, &sw, &self.weights, &self.bias, lambda, true);
            f = nf;
            (gw, gb) = g.expect("gradient requested");
            gnorm2 = gw.iter().chain(gb.iter()).map(|v| v * v).sum::<f64>();
            history.push(f);
        }
        Ok(LogRegFit {
            model: self,
            objective: history,
            grad_norm: gnorm2.sqrt(),
            converged: gnorm2.sqrt() < cfg.tol,
        })
    }

    pub fn probabilities(&self, x: &[f64]) -> Array1<f64> {
        let logits = self.weights.dot(&Array1::from(x.to_vec())) + &self.bias;
        softmax(logits.view())
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities(x);
        p.iter().enumerate().fold(0, |b, (i, &v)| if v > p[b] { i } else { b })
    }
}

pub fn logreg_fit(
    x: &Array2<f64>,
    y: &[usize],
    class_weights: &[f64],
    num_classes: usize,
    cfg: &LogRegConfig,
) -> Result<LogRegFit> {
    LogRegModel::zeros(num_classes, x.ncols(), cfg.reg_lambda).fit_from(x, y, class_weights, cfg)
}

// ---------------------------------------------------------------- prosodic aggregate

pub const PROSODIC_FEATURES: usize = 4 * PROSODY_DIM + 1;

fn span_duration(m: &ProsodyMatrix) -> f64 {
    match (m.word_refs.first(), m.word_refs.last()) {
        (Some(a), Some(b)) => b.end - a.start,
        _ => 0.0,
    }
}

/// Mean and population std over words of each of the nine features for
/// both arguments, then `dur(Arg2) / dur(Arg1)`: 37 values.
pub fn prosodic_features(arg1: &ProsodyMatrix, arg2: &ProsodyMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(PROSODIC_FEATURES);
    for m in [arg1, arg2] {
        if m.is_empty() {
            return Err(Error::Validation("missing prosody for an argument".into()));
        }
        let n = m.len() as f64;
        let mean: Vec<f64> = (0..PROSODY_DIM).map(|k| m.rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..PROSODY_DIM).map(|k| (m.rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
        out.extend(mean.iter().copied());
        out.extend(std);
    }
    let d1 = span_duration(arg1);
    if d1 <= 0.0 {
        return Err(Error::Validation("Arg1 has zero duration".into()));
    }
    out.push(span_duration(arg2) / d1);
    Ok(out)
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..dim).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 1e-12 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

// ---------------------------------------------------------------- end-to-end baselines

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    TfidfLogreg,
    ProsodicLogreg,
    Combined,
}

impl BaselineKind {
    fn uses_text(self) -> bool {
        matches!(self, BaselineKind::TfidfLogreg | BaselineKind::Combined)
    }

    fn uses_prosody(self) -> bool {
        matches!(self, BaselineKind::ProsodicLogreg | BaselineKind::Combined)
    }
}

/// One instance as the baselines see it.
#[derive(Debug, Clone, Copy)]
pub struct BaselineInput<'a> {
    pub arg1_text: &'a str,
    pub arg2_text: &'a str,
    pub prosody: Option<(&'a ProsodyMatrix, &'a ProsodyMatrix)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub text: Option<PairTfidf>,
    pub scaler: Option<Standardizer>,
    pub clf: LogRegModel,
}

#[derive(Serialize, Deserialize)]
struct BaselineHeader {
    kind: BaselineKind,
    text: Option<PairTfidf>,
    scaler: Option<Standardizer>,
    reg_lambda: f64,
}

impl Baseline {
    fn features(kind: BaselineKind, text: Option<&PairTfidf>, scaler: Option<&Standardizer>, x: &BaselineInput) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        if let Some(t) = text {
            v.extend(t.transform(x.arg1_text, x.arg2_text));
        }
        if kind.uses_prosody() {
            let (p1, p2) = x.prosody.ok_or_else(|| Error::Validation("baseline needs prosody".into()))?;
            let raw = prosodic_features(p1, p2)?;
            v.extend(match scaler {
                Some(s) => s.apply(&raw),
                None => raw,
            });
        }
        Ok(v)
    }

    pub fn fit(
        kind: BaselineKind,
        inputs: &[BaselineInput],
        labels: &[usize],
        class_weights: &[f64],
        cfg: &LogRegConfig,
    ) -> Result<(Self, LogRegFit)> {
        let text = if kind.uses_text() {
            let pairs: Vec<(&str, &str)> = inputs.iter().map(|x| (x.arg1_text, x.arg2_text)).collect();
            Some(PairTfidf::fit(&pairs)?)
        } else {
            None
        };
        let scaler = if kind.uses_prosody() {
            let raw = inputs
                .iter()
                .map(|x| {
                    let (p1, p2) = x.prosody.ok_or_else(|| Error::Validation("baseline needs prosody".into()))?;
                    prosodic_features(p1, p2)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Standardizer::fit(&raw))
        } else {
            None
        };
        let rows = inputs
            .iter()
            .map(|x| Self::features(kind, text.as_ref(), scaler.as_ref(), x))
            .collect::<Result<Vec<_>>>()?;
        let dim = rows.first().map_or(0, Vec::len);
        let x = Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j]);
        let fit = logreg_fit(&x, labels, class_weights, class_weights.len(), cfg)?;
        Ok((
            Baseline {
                kind,
                text,
                scaler,
                clf: fit.model.clone(),
            },
            fit,
        ))
    }

    pub fn predict(&self, x: &BaselineInput) -> Result<usize> {
        Ok(self.clf.predict(&Self::features(self.kind, self.text.as_ref(), self.scaler.as_ref(), x)?))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = BaselineHeader {
            kind: self.kind,
            text: self.text.clone(),
            scaler: self.scaler.clone(),
            reg_lambda: self.clf.reg_lambda,
        };
        let mut c = Checkpoint::new("baseline", serde_json::to_value(header)?);
        let w = &self.clf.weights;
        c.push("weights", w.shape(), w.as_slice().expect("contiguous"));
        c.push("bias", self.clf.bias.shape(), self.clf.bias.as_slice().expect("contiguous"));
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("baseline")?;
        let h: BaselineHeader = serde_json::from_value(c.header.config.clone())?;
        let (ws, wd) = c.get("weights")?;
        let (_, bd) = c.get("bias")?;
        let bad = |e: ndarray::ShapeError| Error::Checkpoint(e.to_string());
        Ok(Baseline {
            kind: h.kind,
            text: h.text,
            scaler: h.scaler,
            clf: LogRegModel {
                weights: Array2::from_shape_vec((ws[0], ws[1]), wd.to_vec()).map_err(bad)?,
                bias: Array1::from(bd.to_vec()),
                reg_lambda: h.reg_lambda,
            },
        })
    }
}

/// Majority class by summed class weight; what a heavily regularized model
/// collapses to.
pub fn weighted_prior_argmax(labels: &[usize], class_weights: &[f64]) -> usize {
    let mut mass: HashMap<usize, f64> = HashMap::new();
    for &l in labels {
        *mass.entry(l).or_default() += class_weights[l];
    }
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..class_weights.len() {
        let m = mass.get(&c).copied().unwrap_or(0.0);
        if m > best.1 {
            best = (c, m);
        }
    }
    best.0
}
