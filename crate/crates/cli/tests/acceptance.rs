//! Acceptance suite: one line per criterion, PASS or FAIL, with timing.
//! Exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::Instant;

use idrkit::audio::{AudioClip, ClipOrigin, TimeSpan, WordTimestamp};
use idrkit::baselines::{Baseline, BaselineInput, BaselineKind, LogRegConfig};
use idrkit::corpus::{LanguageCode, RelationLabel};
use idrkit::dataset::*;
use idrkit::fixture::{published_manifest, PlantedCorpus};
use idrkit::miner::{mine_corpus, Tolerance};
use idrkit::model::synthetic::{random_arg, random_sample, separable_set};
use idrkit::model::*;
use idrkit::prosody::{compute_logmel, extract_raw_prosody, LogMel};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- 1. planted mining

fn planted_mining() -> Check {
    let corpus = PlantedCorpus::generate();
    let lexicons = PlantedCorpus::lexicons().map_err(|e| e.to_string())?;
    let targets = vec![LanguageCode::new("fr"), LanguageCode::new("de")];
    let t0 = Instant::now();
    let out = mine_corpus(&corpus.subtitles(), &lexicons, &Tolerance::default(), |_| targets.clone()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let want: BTreeSet<_> = corpus.events.iter().map(|e| (e.talk_id.clone(), e.segment_index, e.label)).collect();
    let got: BTreeSet<_> = out.instances.iter().map(|i| (i.talk_id.clone(), i.source_segment_index, i.label)).collect();
    let tp = want.intersection(&got).count() as f64;
    let (p, r) = (tp / got.len().max(1) as f64, tp / want.len() as f64);
    ensure!(out.instances.len() == 12, "{} instances", out.instances.len());
    ensure!(p == 1.0 && r == 1.0, "P {p} R {r}");
    ensure!(secs < 5.0, "{secs:.2}s");

    // the same corpus through the binary reports the same counts
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_idrkit");
    let ok = |args: &[&str]| Command::new(bin).args(args).current_dir(dir.path()).output().map(|o| o.status.success()).unwrap_or(false);
    ensure!(ok(&["make-fixture", "."]) && ok(&["run", "ingest", "mine"]), "cli run failed");
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/mine/report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(rep["emitted"] == 12 && rep["dropped_by_filter"] == rep["candidates"].as_u64().unwrap_or(0) - 12, "cli report {rep}");
    Ok(format!("12/12 planted, P=R=1, mined in {:.0} ms", secs * 1e3))
}

// ---------------------------------------------------------------- 2. published table

fn published_table() -> Check {
    let report = stats_report(&published_manifest());
    let json = report.to_json();
    ensure!(json == include_str!("../../core/tests/golden/stats_published.json"), "JSON differs from golden file");
    let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let en = v["languages"].as_array().and_then(|a| a.iter().find(|l| l["language"] == "en")).ok_or("no en")?;
    ensure!(en["total"] == 2603, "en total {}", en["total"]);
    let labels: Vec<u64> = ["cause-effect", "contrast", "temporal", "elaboration"].iter().map(|k| en["labels"][k].as_u64().unwrap_or(0)).collect();
    ensure!(labels == [593, 704, 546, 760], "labels {labels:?}");
    let splits: Vec<u64> = ["train", "validation", "test"].iter().map(|s| en["splits"][s]["relations"].as_u64().unwrap_or(0)).collect();
    ensure!(splits == [1563, 520, 520], "splits {splits:?}");
    Ok("EN 2603 = 593/704/546/760, 1563/520/520, byte-exact".into())
}

// ---------------------------------------------------------------- 3. split invariants

fn entry(id: String, talk: String, label: RelationLabel) -> ManifestEntry {
    ManifestEntry {
        arg1_clip: format!("clips/{id}.1.wav"),
        arg2_clip: format!("clips/{id}.2.wav"),
        instance_id: id,
        talk_id: talk,
        language: LanguageCode::new("en"),
        witness_language: None,
        label,
        arg1_text: "a".into(),
        arg2_text: "b".into(),
        sentence_index: None,
        inter_sentential: true,
        split: Split::Unassigned,
    }
}

fn cell_deviation(cells: &[[f64; 4]; 3], tot: &[f64; 4], ratios: &[f64; 3]) -> f64 {
    let mut w: f64 = 0.0;
    for s in 0..3 {
        for c in 0..4 {
            w = w.max((cells[s][c] - ratios[s] * tot[c]).abs());
        }
    }
    w
}

fn exhaustive(per_talk: &[[f64; 4]], ratios: &[f64; 3]) -> f64 {
    let mut tot = [0.0; 4];
    per_talk.iter().for_each(|t| (0..4).for_each(|c| tot[c] += t[c]));
    let t = per_talk.len();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(t as u32) {
        let (mut cells, mut used, mut k) = ([[0.0; 4]; 3], [0usize; 3], code);
        for talk in per_talk {
            let s = k % 3;
            k /= 3;
            used[s] += 1;
            (0..4).for_each(|c| cells[s][c] += talk[c]);
        }
        if (0..3).any(|s| (ratios[s] > 0.0) != (used[s] > 0)) {
            continue;
        }
        best = best.min(cell_deviation(&cells, &tot, ratios));
    }
    best
}

fn split_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    for round in 0..100 {
        let talks = rng.random_range(3..=12);
        let mut v = Vec::new();
        for t in 0..talks {
            let lean = rng.random_range(0..4);
            for k in 0..rng.random_range(1..=8) {
                let c = if rng.random_bool(0.6) { lean } else { rng.random_range(0..4) };
                v.push(entry(format!("t{t:02}-{k}"), format!("t{t:02}"), RelationLabel::ALL[c]));
            }
        }
        let m = DatasetManifest::new(v).map_err(|e| e.to_string())?;
        let spec = SplitSpec::default_for(["en", "fr", "es"][round % 3], round as u64);
        let out = split(&m, &spec).map_err(|e| format!("round {round}: {e}"))?;

        let mut owner = BTreeMap::new();
        let mut per_talk: BTreeMap<&str, [f64; 4]> = BTreeMap::new();
        let (mut cells, mut tot) = ([[0.0; 4]; 3], [0.0; 4]);
        for e in &out.instances {
            ensure!(*owner.entry(e.talk_id.as_str()).or_insert(e.split) == e.split, "round {round}: talk {} straddles splits", e.talk_id);
            let s = Split::ASSIGNABLE.iter().position(|&x| x == e.split).ok_or(format!("round {round}: unassigned"))?;
            cells[s][e.label.index()] += 1.0;
            tot[e.label.index()] += 1.0;
            per_talk.entry(e.talk_id.as_str()).or_insert([0.0; 4])[e.label.index()] += 1.0;
        }
        let n = out.instances.len() as f64;
        let biggest = per_talk.values().map(|t| t.iter().sum::<f64>()).fold(0.0, f64::max);
        for s in 0..3 {
            let ns: f64 = cells[s].iter().sum();
            ensure!((ns - spec.ratios[s] * n).abs() <= biggest + 1e-9, "round {round}: split {s} has {ns} of {n}");
        }
        let got = cell_deviation(&cells, &tot, &spec.ratios);
        let best = exhaustive(&per_talk.values().copied().collect::<Vec<_>>(), &spec.ratios);
        ensure!(got <= best + 1.0 + 1e-9, "round {round}: deviation {got} vs optimum {best}");
        worst_gap = worst_gap.max(got - best);
    }
    Ok(format!("100 manifests, disjoint, sizes within one talk, worst gap to optimum {worst_gap:.2}"))
}

// ---------------------------------------------------------------- model helpers

fn perturbed(cfg: &FusionConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    for (_, t) in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    p
}

fn layer_norm_mean(h: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Vec<f64> {
    let (n, d) = h.dim();
    let mut out = vec![0.0; d];
    for row in h.rows() {
        let mu = row.sum() / d as f64;
        let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out[j] += (g[j] * (row[j] - mu) / (var + 1e-5).sqrt() + b[j]) / n as f64;
        }
    }
    out
}

// ---------------------------------------------------------------- 4. gamma = 0

fn gamma_zero() -> Check {
    let cfg = FusionConfig::toy(8, 8, 2);
    let off = FusionConfig { ablation: Ablation { prosody: false, audio_stats: true }, ..cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for seed in 0..25 {
        let mut p = perturbed(&cfg, seed);
        p.gamma[0] = 0.0;
        let arg = random_arg(&cfg, &mut rng, 3, 5, 6);
        let pooled = prosody_attend_pool(&arg.h, &arg.prosody, &p, &cfg).map_err(|e| e.to_string())?;
        for (a, b) in pooled.iter().zip(layer_norm_mean(&arg.h, &p.ln1_g, &p.ln1_b)) {
            worst = worst.max((a - b).abs());
        }
        let s = random_sample(&cfg, &mut rng);
        let with = forward(&p, &cfg, &s).map_err(|e| e.to_string())?;
        let without = forward(&p, &off, &s).map_err(|e| e.to_string())?;
        ensure!(with.logits() == without.logits(), "seed {seed}: ablation differs from gamma = 0");
    }
    ensure!(worst < 1e-12, "max |diff| {worst:.3e}");
    Ok(format!("max |pool - pool(LN(H))| = {worst:.1e}; ablation bit-equal"))
}

// ---------------------------------------------------------------- 5. gradients

fn gradient_check() -> Check {
    let cfg = FusionConfig::toy(8, 8, 2);
    let w = [1.0, 1.4, 0.6, 2.0];
    let loss = |p: &ModelParams, s: &Sample| weighted_ce(forward(p, &cfg, s).expect("forward").logits(), s.label, &w).0;
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    // worst entry, re-measured with a finer step to tell truncation error from a wrong gradient
    let mut worst_at = String::new();
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let s = random_sample(&cfg, &mut rng);
        let mut p = perturbed(&cfg, draw);
        let analytic = loss_and_grad(&p, &cfg, &s, &w).map_err(|e| e.to_string())?.1.flat();
        let mut k = 0;
        for ti in 0..p.tensors().len() {
            for j in 0..p.tensors()[ti].2.len() {
                let orig = p.tensors()[ti].2[j];
                let name = p.tensors()[ti].0;
                let mut central = |eps: f64| {
                    p.tensors_mut()[ti].1[j] = orig + eps;
                    let up = loss(&p, &s);
                    p.tensors_mut()[ti].1[j] = orig - eps;
                    let down = loss(&p, &s);
                    p.tensors_mut()[ti].1[j] = orig;
                    (up - down) / (2.0 * eps)
                };
                let rel = |n: f64| (analytic[k] - n).abs() / analytic[k].abs().max(n.abs()).max(1e-6);
                let numeric = central(1e-4);
                if rel(numeric) > worst {
                    worst = rel(numeric);
                    worst_at = format!("draw {draw} {name}[{j}], rel err at eps 1e-5: {:.1e}", rel(central(1e-5)));
                }
                k += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst < 1e-4, "max rel err {worst:.3e} ({worst_at})");
    ensure!(secs < 60.0, "{secs:.1}s");
    Ok(format!("50 draws, max rel err {worst:.2e}"))
}

// ---------------------------------------------------------------- 6. stats pooling

fn stats_pooling() -> Check {
    let cfg = FusionConfig::toy(8, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for extra in 1..=64 {
        let p = perturbed(&cfg, extra as u64);
        let t = rng.random_range(1..10);
        let arg = random_arg(&cfg, &mut rng, 2, 2, t);
        let base = stats_pool(&arg.logmel, &p).map_err(|e| e.to_string())?;
        let padded = arg.logmel.padded(extra, rng.random_range(-50.0..50.0));
        let got = stats_pool(&padded, &p).map_err(|e| e.to_string())?;
        worst = worst.max((&got - &base).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    ensure!(worst < 1e-12, "padding moved output by {worst:.3e}");
    let p = perturbed(&cfg, 9);
    for i in 0..1000 {
        let t = rng.random_range(1..16);
        let frames = Array2::from_shape_fn((cfg.n_mels, t), |_| rng.random_range(-20.0..20.0));
        let mut mask: Vec<bool> = (0..t).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        let (_, sigma) = pooled_moments(&LogMel { frames, mask }, &p).map_err(|e| e.to_string())?;
        ensure!(sigma.iter().all(|&s| s >= 0.0 && s.is_finite()), "input {i}: sigma {sigma}");
    }
    Ok(format!("1..64 masked frames, max change {worst:.1e}; sigma >= 0 on 1000 inputs"))
}

// ---------------------------------------------------------------- 7. normalization

fn normalization() -> Check {
    let cfg = FusionConfig::toy(8, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut zdev, mut pdev, mut adev): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..100 {
        let p = perturbed(&cfg, seed);
        let s = random_sample(&cfg, &mut rng);
        let f = forward(&p, &cfg, &s).map_err(|e| e.to_string())?;
        zdev = zdev.max((f.z().dot(&f.z()).sqrt() - 1.0).abs());
        pdev = pdev.max((f.probabilities().sum() - 1.0).abs());
        let a = ops::attention(s.arg1.h.view(), s.arg1.prosody.dot(&p.prosody_proj).view(), &p.pa_wq, &p.pa_wk, &p.pa_wv, 4);
        for w in &a.weights {
            for r in w.rows() {
                adev = adev.max((r.sum() - 1.0).abs());
            }
        }
    }
    ensure!(zdev <= 1e-6, "|z| off by {zdev:.3e}");
    ensure!(pdev < 1e-9 && adev < 1e-9, "softmax rows off by {pdev:.1e} / {adev:.1e}");
    let balanced: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let w = class_weights(&balanced, 4);
    ensure!(w.iter().all(|&x| x == w[0]), "balanced weights {w:?}");
    Ok(format!("max ||z|-1| {zdev:.1e}, softmax rows within {:.1e}, balanced weights {:?}", pdev.max(adev), w))
}

// ---------------------------------------------------------------- 8. trainer

const CUES: [&str; 4] = ["hence", "whereas", "afterwards", "namely"];
const FILLER: [&str; 12] = ["we", "saw", "the", "old", "river", "town", "people", "came", "then", "light", "market", "road"];

fn text_set(n: usize, seed: u64) -> (Vec<(String, String)>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = |k: usize| (0..k).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect::<Vec<_>>();
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 4;
        let a1 = words(5).join(" ");
        let mut a2 = words(4);
        a2.insert(i % 5, CUES[c]);
        texts.push((a1, a2.join(" ")));
        labels.push(c);
    }
    (texts, labels)
}

fn trainer() -> Check {
    let cfg = FusionConfig { n_mels: 4, conv1_channels: 4, conv2_channels: 4, ..FusionConfig::toy(16, 16, 2) };
    let tc = TrainConfig { lr_heads: 1e-2, lr_stats_head: 1e-2, epochs: 7, seed: 3, ..TrainConfig::default() };
    let set = separable_set(200, &cfg, 21);
    let a = fit(&cfg, &tc, &set, &set, None).map_err(|e| e.to_string())?;
    let b = fit(&cfg, &tc, &set, &set, None).map_err(|e| e.to_string())?;
    ensure!(a.history.len() <= 7, "{} epochs", a.history.len());
    ensure!(a.params == b.params && a.history == b.history, "reruns differ");
    let gold: Vec<usize> = set.iter().map(|s| s.label).collect();
    let pred = set.iter().map(|s| predict(&a.params, &cfg, s).map(|p| p.0)).collect::<idrkit::Result<Vec<_>>>().map_err(|e| e.to_string())?;
    let fusion_f1 = evaluate(&pred, &gold).map_err(|e| e.to_string())?.macro_f1;

    let (texts, labels) = text_set(200, 5);
    let inputs: Vec<BaselineInput> = texts.iter().map(|(a, b)| BaselineInput { arg1_text: a, arg2_text: b, prosody: None }).collect();
    let weights = class_weights(&labels, 4);
    let (m1, _) = Baseline::fit(BaselineKind::TfidfLogreg, &inputs, &labels, &weights, &LogRegConfig::default()).map_err(|e| e.to_string())?;
    let (m2, _) = Baseline::fit(BaselineKind::TfidfLogreg, &inputs, &labels, &weights, &LogRegConfig::default()).map_err(|e| e.to_string())?;
    ensure!(m1 == m2, "baseline reruns differ");
    let (held, held_labels) = text_set(200, 6);
    let held_pred = held
        .iter()
        .map(|(a, b)| m1.predict(&BaselineInput { arg1_text: a, arg2_text: b, prosody: None }))
        .collect::<idrkit::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let tfidf_f1 = evaluate(&held_pred, &held_labels).map_err(|e| e.to_string())?.macro_f1;
    ensure!(fusion_f1 >= 0.95, "fusion macro-F1 {fusion_f1:.3}");
    ensure!(tfidf_f1 >= 0.95, "tf-idf macro-F1 {tfidf_f1:.3}");
    Ok(format!("fusion F1 {fusion_f1:.3} in {} epochs, tf-idf F1 {tfidf_f1:.3}, reruns bit-identical", a.history.len()))
}

// ---------------------------------------------------------------- 9. metrics

fn metrics() -> Check {
    let cm = [[5, 1, 0, 2], [0, 3, 1, 0], [1, 0, 4, 1], [2, 0, 0, 6]];
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (gi, row) in cm.iter().enumerate() {
        for (pi, &n) in row.iter().enumerate() {
            for _ in 0..n {
                g.push(gi);
                p.push(pi);
            }
        }
    }
    let m = evaluate(&p, &g).map_err(|e| e.to_string())?;
    ensure!(m.confusion == cm, "confusion {:?}", m.confusion);
    let prec = [5.0 / 8.0, 3.0 / 4.0, 4.0 / 5.0, 6.0 / 9.0];
    let rec = [5.0 / 8.0, 3.0 / 4.0, 4.0 / 6.0, 6.0 / 8.0];
    let f1: Vec<f64> = (0..4).map(|c| 2.0 * prec[c] * rec[c] / (prec[c] + rec[c])).collect();
    for c in 0..4 {
        ensure!((m.per_class[c].precision - prec[c]).abs() < 1e-15 && (m.per_class[c].recall - rec[c]).abs() < 1e-15, "class {c}");
        ensure!((m.per_class[c].f1 - f1[c]).abs() < 1e-15, "class {c} f1");
    }
    let macro_f1 = f1.iter().sum::<f64>() / 4.0;
    ensure!((m.macro_f1 - macro_f1).abs() < 1e-15, "macro F1 {} vs {macro_f1}", m.macro_f1);
    ensure!(m.accuracy == 18.0 / 26.0, "accuracy {}", m.accuracy);
    Ok(format!("4x4 hand oracle, macro-F1 {macro_f1:.4}"))
}

// ---------------------------------------------------------------- 10. prosody DSP

fn tone(freq: f64, secs: f64) -> AudioClip {
    let n = (secs * 16_000.0) as usize;
    AudioClip {
        samples: (0..n).map(|i| (0.4 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32).collect(),
        sample_rate: 16_000,
        origin: ClipOrigin { talk_id: "t".into(), span: TimeSpan { start: 0.0, end: secs } },
    }
}

fn prosody_dsp() -> Check {
    let mut errs = Vec::new();
    for f in [100.0, 200.0, 300.0] {
        let word = WordTimestamp { word: "w".into(), start: 0.05, end: 0.45 };
        let m = extract_raw_prosody(&tone(f, 0.5), &[word]);
        let rel = (m.rows[0][0] - f).abs() / f;
        ensure!(rel <= 0.01, "{f} Hz tracked as {:.2}", m.rows[0][0]);
        errs.push(format!("{:.2}%", rel * 100.0));
    }
    let lm = compute_logmel(&tone(440.0, 1.0)).map_err(|e| e.to_string())?;
    ensure!(lm.n_frames() == 98, "1 s gives {} frames", lm.n_frames());
    let mut silent = tone(0.0, 1.0);
    silent.samples.iter_mut().for_each(|s| *s = 0.0);
    let floor = 1e-10f64.ln();
    let lm = compute_logmel(&silent).map_err(|e| e.to_string())?;
    ensure!(lm.frames.iter().all(|&v| v == floor), "silence above the floor");
    Ok(format!("f0 errors {}; 98 frames; silence = ln(1e-10)", errs.join("/")))
}

// ---------------------------------------------------------------- 11. gold comparison

fn gold_comparison() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    for round in 0..50 {
        let key = |rng: &mut ChaCha8Rng| (format!("talk{}", rng.random_range(0..3)), rng.random_range(0..12usize));
        let gold_keys: BTreeSet<(String, usize)> = (0..rng.random_range(0..15)).map(|_| key(&mut rng)).collect();
        let gold: Vec<GoldRelation> = gold_keys
            .iter()
            .map(|(t, s)| GoldRelation { talk_id: t.clone(), sentence_index: *s, label: RelationLabel::Contrast, inter_or_intra: Scope::Inter })
            .collect();
        let mut entries = Vec::new();
        let mut mined_inter = BTreeSet::new();
        let mut intra = 0;
        for (i, (t, s)) in (0..rng.random_range(0..15)).map(|_| key(&mut rng)).collect::<BTreeSet<_>>().into_iter().enumerate() {
            let inter = rng.random_bool(0.8);
            if inter {
                mined_inter.insert((t.clone(), s));
            } else {
                intra += 1;
            }
            entries.push(ManifestEntry {
                sentence_index: Some(s),
                inter_sentential: inter,
                witness_language: Some(LanguageCode::new("fr")),
                ..entry(format!("m{i:03}"), t, RelationLabel::Contrast)
            });
        }
        let r = compare_to_gold(&DatasetManifest::new(entries).map_err(|e| e.to_string())?, &gold);
        let matching = gold_keys.intersection(&mined_inter).count();
        let new_inter = mined_inter.difference(&gold_keys).count();
        ensure!(r.matching == matching && r.new_inter == new_inter && r.intra_count == intra, "round {round}: {r:?}");
        let v = serde_json::to_value(&r).map_err(|e| e.to_string())?;
        for k in ["matching", "new_inter", "intra_count"] {
            ensure!(v.get(k).is_some(), "field {k} missing");
        }
    }
    Ok("50 random sets agree with set intersection; schema has matching/new_inter/intra_count".into())
}

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("planted-mining", planted_mining),
        ("published-table", published_table),
        ("split-invariants", split_invariants),
        ("gamma-zero-identity", gamma_zero),
        ("gradient-check", gradient_check),
        ("stats-pooling", stats_pooling),
        ("normalization", normalization),
        ("trainer", trainer),
        ("metrics", metrics),
        ("prosody-dsp", prosody_dsp),
        ("gold-comparison", gold_comparison),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(detail) => println!("PASS  {:>2} {name:<20} {ms:>9.1} ms  {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {name:<20} {ms:>9.1} ms  {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
