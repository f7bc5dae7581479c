use std::collections::{BTreeMap, BTreeSet};

use idrkit::corpus::{LanguageCode, RelationLabel};
use idrkit::dataset::*;
use idrkit::fixture::published_manifest;
use idrkit::review::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entry(id: &str, talk: &str, label: RelationLabel) -> ManifestEntry {
    ManifestEntry {
        instance_id: id.into(),
        talk_id: talk.into(),
        language: LanguageCode::new("en"),
        witness_language: Some(LanguageCode::new("fr")),
        label,
        arg1_text: "a".into(),
        arg2_text: "b".into(),
        arg1_clip: format!("clips/{id}.1.wav"),
        arg2_clip: format!("clips/{id}.2.wav"),
        sentence_index: None,
        inter_sentential: true,
        split: Split::Unassigned,
    }
}

fn random_manifest(rng: &mut ChaCha8Rng, talks: usize) -> DatasetManifest {
    let mut v = Vec::new();
    for t in 0..talks {
        let n = rng.random_range(1..=8);
        // skew: each talk leans toward one class
        let lean = rng.random_range(0..4);
        for k in 0..n {
            let c = if rng.random_bool(0.6) { lean } else { rng.random_range(0..4) };
            v.push(entry(&format!("t{t:02}-{k}"), &format!("t{t:02}"), RelationLabel::ALL[c]));
        }
    }
    DatasetManifest::new(v).unwrap()
}

/// max over (split, class) of |n − r·N|, computed from scratch.
fn max_cell(m: &DatasetManifest, ratios: [f64; 3]) -> f64 {
    let mut cell = [[0f64; 4]; 3];
    let mut tot = [0f64; 4];
    for e in &m.instances {
        let s = Split::ASSIGNABLE.iter().position(|&x| x == e.split).unwrap();
        cell[s][e.label.index()] += 1.0;
        tot[e.label.index()] += 1.0;
    }
    let mut worst: f64 = 0.0;
    for s in 0..3 {
        for c in 0..4 {
            worst = worst.max((cell[s][c] - ratios[s] * tot[c]).abs());
        }
    }
    worst
}

/// Exhaustive optimum over all 3^T assignments that leave no positive split empty.
fn exhaustive_best(per_talk: &[[usize; 4]], ratios: [f64; 3]) -> f64 {
    let mut tot = [0f64; 4];
    for t in per_talk {
        for c in 0..4 {
            tot[c] += t[c] as f64;
        }
    }
    fn go(i: usize, per_talk: &[[usize; 4]], ratios: &[f64; 3], tot: &[f64; 4], cell: &mut [[f64; 4]; 3], used: &mut [usize; 3], best: &mut f64) {
        if i == per_talk.len() {
            if (0..3).any(|s| ratios[s] > 0.0 && used[s] == 0) {
                return;
            }
            let mut w: f64 = 0.0;
            for s in 0..3 {
                for c in 0..4 {
                    w = w.max((cell[s][c] - ratios[s] * tot[c]).abs());
                }
            }
            *best = best.min(w);
            return;
        }
        for s in 0..3 {
            if ratios[s] == 0.0 {
                continue;
            }
            for c in 0..4 {
                cell[s][c] += per_talk[i][c] as f64;
            }
            used[s] += 1;
            go(i + 1, per_talk, ratios, tot, cell, used, best);
            used[s] -= 1;
            for c in 0..4 {
                cell[s][c] -= per_talk[i][c] as f64;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, per_talk, &ratios, &tot, &mut [[0.0; 4]; 3], &mut [0; 3], &mut best);
    best
}

#[test]
fn ten_equal_talks_split_six_two_two() {
    let v: Vec<_> = (0..10).map(|t| entry(&format!("i{t}"), &format!("t{t}"), RelationLabel::Contrast)).collect();
    let m = split(&DatasetManifest::new(v).unwrap(), &SplitSpec::new(0.6, 0.2, 0.2, 1)).unwrap();
    let count = |s| m.instances.iter().filter(|e| e.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (6, 2, 2));
}

#[test]
fn split_rejects_bad_specs() {
    let v: Vec<_> = (0..2).map(|t| entry(&format!("i{t}"), &format!("t{t}"), RelationLabel::Contrast)).collect();
    let m = DatasetManifest::new(v).unwrap();
    assert!(split(&m, &SplitSpec::new(0.6, 0.2, 0.2, 1)).is_err());
    assert!(split(&m, &SplitSpec::new(0.5, 0.2, 0.2, 1)).is_err());
    assert!(split(&m, &SplitSpec::new(1.2, -0.2, 0.0, 1)).is_err());
    // a zero ratio lets two talks fill two splits
    assert!(split(&m, &SplitSpec::new(0.5, 0.0, 0.5, 1)).is_ok());
}

#[test]
fn random_manifests_meet_split_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for round in 0..100 {
        let talks = rng.random_range(3..=12);
        let m = random_manifest(&mut rng, talks);
        let spec = SplitSpec::default_for(["en", "fr", "es"][round % 3], round as u64);
        let out = split(&m, &spec).unwrap();

        // talk-disjoint
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &out.instances {
            assert_ne!(e.split, Split::Unassigned);
            assert_eq!(*owner.entry(&e.talk_id).or_insert(e.split), e.split, "round {round}");
        }

        // split sizes within one talk of the target
        let biggest = talk_counts(&m.instances).iter().map(|t| t.size()).max().unwrap() as f64;
        let n = out.instances.len() as f64;
        for (s, split) in Split::ASSIGNABLE.iter().enumerate() {
            let ns = out.instances.iter().filter(|e| e.split == *split).count() as f64;
            assert!((ns - spec.ratios[s] * n).abs() <= biggest + 1e-9, "round {round}: {split:?} has {ns} of {n}");
        }

        // per-class proportions within one instance of the exhaustive optimum
        let per_talk: Vec<[usize; 4]> = talk_counts(&m.instances).iter().map(|t| t.per_class).collect();
        let best = exhaustive_best(&per_talk, spec.ratios);
        let got = max_cell(&out, spec.ratios);
        assert!(got <= best + 1.0 + 1e-9, "round {round}: {got} vs optimum {best}");

        // pure function of (manifest, spec)
        assert_eq!(split(&m, &spec).unwrap(), out);
    }
}

#[test]
fn per_language_split_uses_each_spec() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all = random_manifest(&mut rng, 8).instances;
    let mut fr = random_manifest(&mut rng, 8).instances;
    for e in &mut fr {
        e.instance_id = format!("fr-{}", e.instance_id);
        e.talk_id = format!("fr-{}", e.talk_id);
        e.language = LanguageCode::new("fr");
    }
    all.extend(fr);
    let m = DatasetManifest::new(all).unwrap();
    let out = split_by_language(&m, |l| SplitSpec::default_for(l.as_str(), 9)).unwrap();
    let report = stats_report(&out);
    for l in &report.languages {
        for c in RelationLabel::ALL {
            let sum: usize = [Split::Train, Split::Validation, Split::Test, Split::Unassigned]
                .iter()
                .map(|&s| l.splits.get(s).labels.get(c))
                .sum();
            assert_eq!(sum, l.labels.get(c));
        }
    }
}

#[test]
fn published_counts_render_byte_exact() {
    let report = stats_report(&published_manifest());
    let json = report.to_json();
    assert_eq!(json, include_str!("golden/stats_published.json"));

    // independent read of the English numbers
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let en = v["languages"].as_array().unwrap().iter().find(|l| l["language"] == "en").unwrap();
    assert_eq!(en["total"], 2603);
    let labels: Vec<u64> = ["cause-effect", "contrast", "temporal", "elaboration"]
        .iter()
        .map(|k| en["labels"][k].as_u64().unwrap())
        .collect();
    assert_eq!(labels, [593, 704, 546, 760]);
    let splits: Vec<(u64, u64)> = ["train", "validation", "test"]
        .iter()
        .map(|s| (en["splits"][s]["relations"].as_u64().unwrap(), en["splits"][s]["talks"].as_u64().unwrap()))
        .collect();
    assert_eq!(splits, [(1563, 188), (520, 78), (520, 82)]);
    assert!(report.to_text().contains("en        total            2603    348          593       704       546          760"));
}

#[test]
fn empty_manifest_is_all_zero() {
    let r = stats_report(&DatasetManifest::default());
    assert_eq!(r.total, 0);
    assert!(r.languages.is_empty());
    assert_eq!(r.labels, LabelCounts::default());
}

#[test]
fn manifest_roundtrip_and_duplicates() {
    let m = published_manifest();
    let text = m.to_jsonl();
    let back = DatasetManifest::from_jsonl(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.provenance_hash(), m.provenance_hash());
    let ids: Vec<_> = m.instances.iter().map(|e| e.instance_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let dup = vec![entry("x", "t", RelationLabel::Temporal), entry("x", "u", RelationLabel::Temporal)];
    assert!(DatasetManifest::new(dup).is_err());
    let err = DatasetManifest::from_jsonl("{\"instance_id\": 3}\n").unwrap_err();
    assert!(matches!(err, idrkit::Error::Parse { line: 1, .. }));
}

#[test]
fn missing_clips_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let m = DatasetManifest::new(vec![entry("a", "t", RelationLabel::Contrast)]).unwrap();
    std::fs::create_dir_all(dir.path().join("clips")).unwrap();
    std::fs::write(dir.path().join("clips/a.1.wav"), b"").unwrap();
    assert_eq!(m.missing_clips(dir.path()), ["clips/a.2.wav"]);
}

// ---------------------------------------------------------------- metrics

#[test]
fn confusion_matrix_hand_oracle() {
    // rows gold, columns predicted
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
    let m = evaluate(&p, &g).unwrap();
    assert_eq!(m.confusion, cm);
    // precision = tp / column sum ; recall = tp / row sum
    let prec = [5.0 / 8.0, 3.0 / 4.0, 4.0 / 5.0, 6.0 / 9.0];
    let rec = [5.0 / 8.0, 3.0 / 4.0, 4.0 / 6.0, 6.0 / 8.0];
    let f1: Vec<f64> = (0..4).map(|c| 2.0 * prec[c] * rec[c] / (prec[c] + rec[c])).collect();
    for c in 0..4 {
        assert_eq!(m.per_class[c].precision, prec[c]);
        assert_eq!(m.per_class[c].recall, rec[c]);
        assert!((m.per_class[c].f1 - f1[c]).abs() < 1e-15);
    }
    assert_eq!(m.accuracy, 18.0 / 26.0);
    assert!((m.macro_f1 - f1.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    assert!((m.macro_precision - prec.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    assert!((m.macro_recall - rec.iter().sum::<f64>() / 4.0).abs() < 1e-15);
}

#[test]
fn metric_edge_cases() {
    let gold = [0, 1, 2, 3, 0, 1, 2, 3];
    let perfect = evaluate(&gold, &gold).unwrap();
    assert_eq!((perfect.accuracy, perfect.macro_f1, perfect.macro_precision), (1.0, 1.0, 1.0));
    let one = evaluate(&[0; 8], &gold).unwrap();
    assert_eq!(one.accuracy, 0.25);
    // class 0: P = 2/8, R = 1 → F1 = 0.4 ; others 0
    assert!((one.macro_f1 - 0.4 / 4.0).abs() < 1e-15);
    assert!(matches!(evaluate(&[4], &[0]), Err(idrkit::Error::Range(_))));
    assert!(evaluate(&[0, 1], &[0]).is_err());
}

#[test]
fn macro_f1_invariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
    let p: Vec<usize> = g.iter().map(|&x| if rng.random_bool(0.7) { x } else { rng.random_range(0..4) }).collect();
    let perm = [2, 0, 3, 1];
    let a = evaluate(&p, &g).unwrap();
    let b = evaluate(&p.iter().map(|&x| perm[x]).collect::<Vec<_>>(), &g.iter().map(|&x| perm[x]).collect::<Vec<_>>()).unwrap();
    assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
    assert_eq!(a.accuracy, b.accuracy);
}

// ---------------------------------------------------------------- gold comparison

fn mined(id: &str, talk: &str, sentence: usize, label: RelationLabel, witness: &str, inter: bool) -> ManifestEntry {
    ManifestEntry {
        sentence_index: Some(sentence),
        inter_sentential: inter,
        witness_language: Some(LanguageCode::new(witness)),
        ..entry(id, talk, label)
    }
}

fn gold(talk: &str, sentence: usize, label: RelationLabel) -> GoldRelation {
    GoldRelation {
        talk_id: talk.into(),
        sentence_index: sentence,
        label,
        inter_or_intra: Scope::Inter,
    }
}

#[test]
fn five_gold_three_mined_two_overlap() {
    use RelationLabel::*;
    let g = vec![
        gold("a", 1, Contrast),
        gold("a", 4, Temporal),
        gold("b", 2, Elaboration),
        gold("b", 7, CauseEffect),
        gold("c", 0, Contrast),
    ];
    let ours = DatasetManifest::new(vec![
        mined("m1", "a", 4, Temporal, "fr", true),
        mined("m2", "b", 7, Contrast, "de", true),
        mined("m3", "c", 5, Contrast, "fr", true),
        mined("m4", "c", 0, Contrast, "fr", false),
    ])
    .unwrap();
    let r = compare_to_gold(&ours, &g);

    // set-intersection oracle on (talk, sentence) of inter-sentential mined instances
    let gk: BTreeSet<(String, usize)> = g.iter().map(|x| (x.talk_id.clone(), x.sentence_index)).collect();
    let mk: BTreeSet<(String, usize)> = ours
        .instances
        .iter()
        .filter(|e| e.inter_sentential)
        .map(|e| (e.talk_id.clone(), e.sentence_index.unwrap()))
        .collect();
    let inter = gk.intersection(&mk).count();
    assert_eq!(inter, 2);
    assert_eq!(r.matching, inter);
    assert_eq!(r.new_inter, mk.difference(&gk).count());
    assert_eq!(r.intra_count, 1);
    assert_eq!(r.mined_inter, 3);
    assert_eq!(r.gold_total, 5);
    assert_eq!(r.label_agreement, LabelAgreement { compared: 2, agreeing: 1 });
    assert_eq!(r.per_witness_language["fr"], WitnessBreakdown { mined_inter: 2, matching: 1, new_inter: 1 });
    assert_eq!(r.per_witness_language["de"], WitnessBreakdown { mined_inter: 1, matching: 1, new_inter: 0 });

    let v = serde_json::to_value(&r).unwrap();
    for k in ["matching", "new_inter", "intra_count", "per_witness_language", "criterion"] {
        assert!(v.get(k).is_some(), "{k}");
    }
}

#[test]
fn gold_identity_and_disjoint() {
    use RelationLabel::*;
    let g = vec![gold("a", 1, Contrast), gold("a", 3, Temporal)];
    let same = DatasetManifest::new(vec![mined("x", "a", 1, Contrast, "fr", true), mined("y", "a", 3, Temporal, "fr", true)]).unwrap();
    let r = compare_to_gold(&same, &g);
    assert_eq!((r.matching, r.new_inter), (2, 0));
    let other = DatasetManifest::new(vec![mined("x", "b", 1, Contrast, "fr", true)]).unwrap();
    assert_eq!(compare_to_gold(&other, &g).matching, 0);
    let text = "{\"talk_id\":\"a\",\"sentence_index\":1,\"label\":\"contrast\",\"inter_or_intra\":\"inter\"}\n";
    assert_eq!(parse_gold(text).unwrap(), vec![gold("a", 1, Contrast)]);
}

// ---------------------------------------------------------------- review

fn verdict(id: &str, decision: Decision, class: Option<ErrorClass>, reviewer: &str, ts: &str) -> Verdict {
    Verdict {
        instance_id: id.into(),
        decision,
        error_class: class,
        corrected_spans: (decision == Decision::Fix).then_some(CorrectedSpans { arg1: [0, 3], arg2: [4, 9] }),
        reviewer_id: reviewer.into(),
        timestamp: ts.into(),
    }
}

#[test]
fn hundred_verdict_session_rates() {
    let mut vs = Vec::new();
    for i in 0..100 {
        let id = format!("i{i:03}");
        let v = match i {
            0..=3 => verdict(&id, Decision::Reject, Some(ErrorClass::ExtraneousContent), "r1", "2025-01-01T10:00:00Z"),
            4..=5 => verdict(&id, Decision::Fix, Some(ErrorClass::EarlyCut), "r1", "2025-01-01T10:00:00Z"),
            6..=7 => verdict(&id, Decision::Reject, Some(ErrorClass::NotImplicit), "r1", "2025-01-01T10:00:00Z"),
            _ => verdict(&id, Decision::Accept, None, "r1", "2025-01-01T10:00:00Z"),
        };
        vs.push(v);
    }
    let text = write_verdicts(&vs).unwrap();
    let parsed = parse_verdicts(&text).unwrap();
    assert_eq!(write_verdicts(&parsed).unwrap(), text);

    let r = error_report(&parsed);
    // direct count over the file
    let seg = text.lines().filter(|l| l.contains("extraneous_content") || l.contains("early_cut")).count();
    let ni = text.lines().filter(|l| l.contains("not_implicit")).count();
    assert_eq!((r.segmentation_errors, r.not_implicit), (seg, ni));
    assert_eq!((r.segmentation_rate, r.not_implicit_rate), (0.06, 0.02));

    let manifest = DatasetManifest::new((0..100).map(|i| entry(&format!("i{i:03}"), "t", RelationLabel::Contrast)).collect()).unwrap();
    let before = manifest.clone();
    let release = ReleaseFilter::from_verdicts(&parsed).apply(&manifest);
    assert_eq!(manifest, before);
    let gone: Vec<_> = manifest.instances.iter().filter(|e| !release.instances.contains(e)).map(|e| e.instance_id.as_str()).collect();
    assert_eq!(gone, ["i000", "i001", "i002", "i003", "i006", "i007"]);
}

#[test]
fn verdict_schema_and_merge() {
    assert!(write_verdicts(&[]).is_err());
    let bad = "{\"instance_id\":\"a\",\"decision\":\"reject\",\"reviewer_id\":\"r\",\"timestamp\":\"t\"}\n";
    assert!(matches!(parse_verdicts(bad), Err(idrkit::Error::Parse { line: 1, .. })));
    let extra = "\n{\"instance_id\":\"a\",\"decision\":\"accept\",\"reviewer_id\":\"r\",\"timestamp\":\"t\",\"x\":1}\n";
    assert!(matches!(parse_verdicts(extra), Err(idrkit::Error::Parse { line: 2, .. })));
    let fix = "{\"instance_id\":\"a\",\"decision\":\"fix\",\"reviewer_id\":\"r\",\"timestamp\":\"t\"}\n";
    assert!(parse_verdicts(fix).is_err());

    // last writer wins per (instance, reviewer)
    let vs = vec![
        verdict("a", Decision::Reject, Some(ErrorClass::WrongLabel), "r1", "2025-01-02"),
        verdict("a", Decision::Accept, None, "r1", "2025-01-01"),
        verdict("b", Decision::Accept, None, "r1", "2025-01-01"),
        verdict("b", Decision::Reject, Some(ErrorClass::NotImplicit), "r1", "2025-01-01"),
    ];
    let merged = merge_verdicts(&vs);
    assert_eq!(merged.len(), 2);
    assert_eq!(merged[0].decision, Decision::Reject);
    assert_eq!(merged[1].decision, Decision::Reject, "same timestamp: later row wins");
}

#[test]
fn disagreement_needs_adjudication() {
    let vs = vec![
        verdict("a", Decision::Accept, None, "r1", "1"),
        verdict("a", Decision::Reject, Some(ErrorClass::NotImplicit), "r2", "1"),
        verdict("b", Decision::Accept, None, "r1", "1"),
        verdict("b", Decision::Accept, None, "r2", "1"),
    ];
    let f = ReleaseFilter::from_verdicts(&vs);
    assert_eq!(f.states["a"], ReleaseState::NeedsAdjudication);
    assert!(!f.keeps("a"));
    assert!(f.keeps("b"));
    assert!(f.keeps("never-reviewed"));
}

#[test]
fn session_export_copies_clips() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = DatasetManifest::new((0..5).map(|i| entry(&format!("i{i}"), "t", RelationLabel::Temporal)).collect()).unwrap();
    std::fs::create_dir_all(root.path().join("clips")).unwrap();
    for e in &m.instances {
        std::fs::write(root.path().join(&e.arg1_clip), b"RIFF").unwrap();
    }
    let (picked, missing) = export_session(&m, root.path(), out.path(), 3, 7).unwrap();
    assert_eq!(picked.len(), 3);
    assert_eq!(missing.len(), 3);
    assert!(picked.iter().all(|e| out.path().join(&e.arg1_clip).is_file()));
    let again = export_session(&m, root.path(), out.path(), 3, 7).unwrap().0;
    assert_eq!(again, picked);
    assert_eq!(DatasetManifest::load(&out.path().join("session.jsonl")).unwrap().instances, picked);
}

#[test]
fn resplitting_published_english_is_balanced() {
    let mut m = published_manifest();
    m.instances.retain(|e| e.language.as_str() == "en");
    let t0 = std::time::Instant::now();
    let out = split(&m, &SplitSpec::default_for("en", 0)).unwrap();
    let elapsed = t0.elapsed();
    let spec = SplitSpec::default_for("en", 0);
    assert!(max_cell(&out, spec.ratios) < 2.0, "{}", max_cell(&out, spec.ratios));
    assert!(elapsed.as_secs_f64() < 30.0, "{elapsed:?}");
}
