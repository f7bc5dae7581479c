//! Text–audio fusion classifier.
//!
//! Per argument: prosody cross-attention over the span's token states,
//! mean pooling, masked statistics pooling of the log-mel frames, and an
//! α-scaled residual merge. The two argument vectors then go through a
//! bidirectional pair attention, an MLP, ℓ2 normalization and a classifier.
//! All math is `f64` with explicit reverse-mode gradients.

pub mod backbone;
mod fusion;
pub mod ops;
pub mod synthetic;
mod train;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub use fusion::{
    backward, forward, fuse_audio, loss_and_grad, pair_fuse_classify, pooled_moments, prosody_attend_pool, stats_pool,
    weighted_ce, ArgInput, Forward, PairOutput, Sample,
};
pub use train::{
    accumulate_gradients, class_weights, evaluate_loss, fit, lr_multiplier, predict, supcon_loss, write_history_csv,
    EpochRecord, FitFailure, Fitted, TrainConfig,
};

/// Switches for the Pr/Au ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub prosody: bool,
    pub audio_stats: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            prosody: true,
            audio_stats: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    pub proj_dim: usize,
    pub attn_heads: usize,
    pub tau: f64,
    pub gamma_init: f64,
    pub alpha: f64,
    pub prosody_dim: usize,
    pub num_classes: usize,
    pub n_mels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub ablation: Ablation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d: 64,
            proj_dim: 512,
            attn_heads: 4,
            tau: 0.07,
            gamma_init: 0.1,
            alpha: 0.1,
            prosody_dim: crate::prosody::PROSODY_DIM,
            num_classes: 4,
            n_mels: 128,
            conv1_channels: 256,
            conv2_channels: 256,
            ablation: Ablation::default(),
        }
    }
}

impl FusionConfig {
    /// Small config for toy experiments and gradient checks.
    pub fn toy(d: usize, proj_dim: usize, heads: usize) -> Self {
        FusionConfig {
            d,
            proj_dim,
            attn_heads: heads,
            n_mels: 6,
            conv1_channels: 5,
            conv2_channels: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.d == 0 || self.proj_dim == 0 || self.attn_heads == 0 {
            return bad("d, proj_dim and attn_heads must be positive".into());
        }
        if self.proj_dim % self.attn_heads != 0 {
            return bad(format!("proj_dim {} not divisible by {} heads", self.proj_dim, self.attn_heads));
        }
        if self.d % self.attn_heads != 0 {
            return bad(format!("d {} not divisible by {} heads", self.d, self.attn_heads));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        Ok(())
    }
}

/// Which learning rate a tensor trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Heads,
    StatsHead,
}

macro_rules! model_params {
    ($( $name:ident : $ty:ident, $group:ident, $decay:expr; )*) => {
        /// Every trainable tensor. Gradients use the same type.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ModelParams {
            $( pub $name: $ty<f64>, )*
        }

        impl ModelParams {
            pub const NAMES: &'static [&'static str] = &[$( stringify!($name) ),*];

            pub fn zeros_like(&self) -> Self {
                ModelParams { $( $name: $ty::zeros(self.$name.raw_dim()), )* }
            }

            pub fn tensors(&self) -> Vec<(&'static str, &[usize], &[f64])> {
                vec![$( (stringify!($name), self.$name.shape(),
                    self.$name.as_slice_memory_order().expect("contiguous")) ),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
                vec![$( (stringify!($name),
                    self.$name.as_slice_memory_order_mut().expect("contiguous")) ),*]
            }

            pub fn group_of(name: &str) -> ParamGroup {
                match name {
                    $( stringify!($name) => ParamGroup::$group, )*
                    _ => ParamGroup::Heads,
                }
            }

            /// Biases, layer-norm parameters and γ are exempt from weight decay.
            pub fn decays(name: &str) -> bool {
                match name {
                    $( stringify!($name) => $decay, )*
                    _ => false,
                }
            }

            fn load_from(shapes: &Self, ckpt: &Checkpoint) -> Result<Self> {
                Ok(ModelParams { $( $name: {
                    let (shape, data) = ckpt.get(stringify!($name))?;
                    if shape != shapes.$name.shape() {
                        return Err(Error::Checkpoint(format!(
                            "{}: shape {:?}, expected {:?}", stringify!($name), shape, shapes.$name.shape())));
                    }
                    $ty::from_shape_vec(shapes.$name.raw_dim(), data.to_vec())
                        .map_err(|e| Error::Checkpoint(e.to_string()))?
                }, )* })
            }
        }
    };
}

model_params! {
    prosody_proj: Array2, Heads, true;
    pa_wq: Array2, Heads, true;
    pa_wk: Array2, Heads, true;
    pa_wv: Array2, Heads, true;
    gamma: Array1, Heads, false;
    ln1_g: Array1, Heads, false;
    ln1_b: Array1, Heads, false;
    conv1_w: Array3, StatsHead, true;
    conv1_b: Array1, StatsHead, false;
    conv2_w: Array3, StatsHead, true;
    conv2_b: Array1, StatsHead, false;
    stats_proj: Array2, StatsHead, true;
    ln2_g: Array1, Heads, false;
    ln2_b: Array1, Heads, false;
    pf_wq: Array2, Heads, true;
    pf_wk: Array2, Heads, true;
    pf_wv: Array2, Heads, true;
    mlp_w1: Array2, Heads, true;
    mlp_b1: Array1, Heads, false;
    mlp_w2: Array2, Heads, true;
    mlp_b2: Array1, Heads, false;
    cls_w1: Array2, Heads, true;
    cls_b1: Array1, Heads, false;
    cls_w2: Array2, Heads, true;
    cls_b2: Array1, Heads, false;
}

fn glorot2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

fn conv_init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Array3<f64> {
    let a = (6.0 / ((inp + out) * 3) as f64).sqrt();
    Array3::from_shape_simple_fn((out, inp, 3), || rng.random_range(-a..a))
}

impl ModelParams {
    /// Seeded Glorot-uniform init; LN gains 1, biases 0, γ = `gamma_init`.
    pub fn init(cfg: &FusionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, p, c1, c2) = (cfg.d, cfg.proj_dim, cfg.conv1_channels, cfg.conv2_channels);
        Ok(ModelParams {
            prosody_proj: glorot2(&mut rng, cfg.prosody_dim, d),
            pa_wq: glorot2(&mut rng, d, d),
            pa_wk: glorot2(&mut rng, d, d),
            pa_wv: glorot2(&mut rng, d, d),
            gamma: Array1::from_elem(1, cfg.gamma_init),
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            conv1_w: conv_init(&mut rng, c1, cfg.n_mels),
            conv1_b: Array1::zeros(c1),
            conv2_w: conv_init(&mut rng, c2, c1),
            conv2_b: Array1::zeros(c2),
            stats_proj: glorot2(&mut rng, 2 * c2, d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            pf_wq: glorot2(&mut rng, d, p),
            pf_wk: glorot2(&mut rng, d, p),
            pf_wv: glorot2(&mut rng, d, p),
            mlp_w1: glorot2(&mut rng, 2 * p, p),
            mlp_b1: Array1::zeros(p),
            mlp_w2: glorot2(&mut rng, p, p),
            mlp_b2: Array1::zeros(p),
            cls_w1: glorot2(&mut rng, p, p),
            cls_b1: Array1::zeros(p),
            cls_w2: glorot2(&mut rng, p, cfg.num_classes),
            cls_b2: Array1::zeros(cfg.num_classes),
        })
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    /// `self += k · other`
    pub fn axpy(&mut self, k: f64, other: &ModelParams) {
        let src = other.tensors();
        for ((_, dst), (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(a, b)| *a += k * b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_checkpoint(&self, cfg: &FusionConfig) -> Result<Checkpoint> {
        let mut c = Checkpoint::new("fusion", serde_json::to_value(cfg)?);
        for (name, shape, data) in self.tensors() {
            c.push(name, shape, data);
        }
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(FusionConfig, Self)> {
        ckpt.expect_kind("fusion")?;
        let cfg: FusionConfig = serde_json::from_value(ckpt.header.config.clone())?;
        let shapes = ModelParams::init(&cfg, 0)?;
        Ok((cfg, Self::load_from(&shapes, ckpt)?))
    }
}
