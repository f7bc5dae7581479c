//! Seeded toy inputs for checks and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::backbone::{encode_pair, BackbonePort, StubBackbone};
use super::fusion::{ArgInput, Sample};
use super::FusionConfig;
use crate::prosody::LogMel;

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Random argument: `n` token rows, `w` prosody rows, `t` log-mel frames.
pub fn random_arg(cfg: &FusionConfig, rng: &mut ChaCha8Rng, n: usize, w: usize, t: usize) -> ArgInput {
    ArgInput {
        h: normal(rng, n, cfg.d),
        prosody: normal(rng, w, cfg.prosody_dim),
        logmel: LogMel {
            frames: normal(rng, cfg.n_mels, t),
            mask: vec![true; t],
        },
    }
}

pub fn random_sample(cfg: &FusionConfig, rng: &mut ChaCha8Rng) -> Sample {
    let arg = |rng: &mut ChaCha8Rng| {
        let (n, w, t) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..9));
        random_arg(cfg, rng, n, w, t)
    };
    Sample {
        arg1: arg(rng),
        arg2: arg(rng),
        label: rng.random_range(0..cfg.num_classes),
    }
}

const FILLER: &[&str] = &[
    "we", "talk", "about", "water", "cities", "people", "think", "often", "the", "new", "idea", "moved", "slowly",
    "across", "many", "places", "time", "world", "small", "question",
];
const CUES: &[&str] = &["hence", "whereas", "afterwards", "namely"];

/// A separable set: Arg2 of class `c` always contains cue word `CUES[c]`;
/// everything else is random filler. Labels cycle through the classes.
pub fn separable_set(n: usize, cfg: &FusionConfig, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = StubBackbone::new(cfg.d, seed ^ 0x5eed);
    (0..n)
        .map(|i| {
            let label = i % cfg.num_classes.min(CUES.len());
            let words = |k: usize, rng: &mut ChaCha8Rng| -> Vec<&str> {
                (0..k).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect()
            };
            let a1 = words(rng.random_range(3..7), &mut rng).join(" ");
            let mut w2 = words(rng.random_range(2..6), &mut rng);
            let at = rng.random_range(0..=w2.len());
            w2.insert(at, CUES[label]);
            let a2 = w2.join(" ");
            let lm = |rng: &mut ChaCha8Rng| {
                let t = rng.random_range(4..12);
                LogMel {
                    frames: normal(rng, cfg.n_mels, t),
                    mask: vec![true; t],
                }
            };
            let (l1, l2) = (lm(&mut rng), lm(&mut rng));
            let states = bb.encode(&encode_pair(&a1, &a2), (&l1, &l2)).expect("markers present");
            let (h1, h2) = (states.arg1(), states.arg2());
            let (p1, p2) = (normal(&mut rng, h1.nrows(), cfg.prosody_dim), normal(&mut rng, h2.nrows(), cfg.prosody_dim));
            Sample {
                arg1: ArgInput {
                    h: h1,
                    prosody: p1,
                    logmel: l1,
                },
                arg2: ArgInput {
                    h: h2,
                    prosody: p2,
                    logmel: l2,
                },
                label,
            }
        })
        .collect()
}
