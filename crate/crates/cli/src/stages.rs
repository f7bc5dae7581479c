//! Stage bodies. Each reads upstream artifacts from the output root, writes
//! into its own directory and returns a JSON report. Paths recorded inside
//! artifacts are relative to the output root, so a run directory can move.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use idrkit::audio::{
    align_span_detailed, cut_audio, energy_anomaly, ingest_wav, parse_word_timestamps, read_wav, write_wav, AudioClip, ClipOrigin,
    TimeSpan, WordTimestamp,
};
use idrkit::baselines::{Baseline, BaselineInput, BaselineKind, LogRegConfig};
use idrkit::checkpoint::Checkpoint;
use idrkit::corpus::{parse_subtitles, parse_talk_registry, LanguageCode, Lexicon, SubtitleFormat, SubtitleSegment, Talk};
use idrkit::dataset::{
    compare_to_gold, evaluate, parse_gold, split_by_language, stats_report, DatasetManifest, ManifestEntry, Split,
};
use idrkit::miner::{mine_corpus, ImplicitInstance, TalkSubtitles};
use idrkit::model::{
    backbone::{encode_pair, BackbonePort, StubBackbone},
    class_weights, fit, predict, write_history_csv, ArgInput, ModelParams, Sample,
};
use idrkit::prosody::{
    compute_logmel, extract_raw_prosody, read_logmel_blob, write_logmel_blob, write_prosody_blob, ProsodyMatrix, TalkProsodyStats,
};
use idrkit::review::{error_report, export_session, merge_verdicts, parse_verdicts, write_verdicts, ReleaseFilter, ReleaseState};
use idrkit::segmenter::{build_context_at, segment_many, ArgSpans, ContextWindow, FixturePort, RelationAnchor, SegmenterPort, SpanSource, SubprocessPort};
use idrkit::trail::{DropCode, FilterRecord};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::stamp::walk;
use crate::{write_json, CliError, PipelineConfig, Stage};

// ---------------------------------------------------------------- artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedTalk {
    pub talk_id: String,
    pub source_language: LanguageCode,
    pub source: Vec<SubtitleSegment>,
    pub translations: BTreeMap<LanguageCode, Vec<SubtitleSegment>>,
    /// 16 kHz mono copy, relative to the output root.
    pub audio: String,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedInstance {
    pub instance_id: String,
    pub talk_id: String,
    pub context: ContextWindow,
    pub spans: ArgSpans,
    pub arg1_text: String,
    pub arg2_text: String,
    pub trail: Vec<FilterRecord>,
}

/// A candidate removed after mining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub instance_id: String,
    pub talk_id: String,
    pub code: DropCode,
    pub trail: Vec<FilterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedArg {
    pub span: TimeSpan,
    pub distance: f64,
    pub clip: String,
    pub words: Vec<WordTimestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedInstance {
    pub instance_id: String,
    pub talk_id: String,
    pub arg1: AlignedArg,
    pub arg2: AlignedArg,
}

/// Per-talk z-normalized prosody; blobs next to it hold the same rows and
/// the log-mel frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyFeatures {
    pub instance_id: String,
    pub talk_id: String,
    pub arg1: ProsodyMatrix,
    pub arg2: ProsodyMatrix,
    pub arg1_logmel: String,
    pub arg2_logmel: String,
}

// ---------------------------------------------------------------- helpers

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, s).with_context(|| path.display().to_string())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| path.display().to_string())
}

fn subtitle_file(cfg: &PipelineConfig, talk_id: &str, lang: &LanguageCode) -> Option<(PathBuf, SubtitleFormat)> {
    ["srt", "json"].into_iter().find_map(|ext| {
        let p = cfg.corpus.subtitles.join(format!("{talk_id}.{lang}.{ext}"));
        p.is_file().then(|| (p, SubtitleFormat::from_extension(ext).expect("known extension")))
    })
}

fn registry(cfg: &PipelineConfig) -> Result<Vec<Talk>> {
    let bytes = std::fs::read(&cfg.corpus.registry).with_context(|| cfg.corpus.registry.display().to_string())?;
    Ok(parse_talk_registry(&bytes)?)
}

fn lexicons(cfg: &PipelineConfig) -> Result<BTreeMap<LanguageCode, Lexicon>> {
    cfg.lexicons
        .iter()
        .map(|(lang, p)| {
            let code = LanguageCode::new(lang);
            let bytes = std::fs::read(p).with_context(|| p.display().to_string())?;
            let lex = Lexicon::from_tsv(&bytes, &code).with_context(|| format!("lexicon {}", p.display()))?;
            Ok((code, lex))
        })
        .collect()
}

fn count_by<K: Ord>(items: impl IntoIterator<Item = K>) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn load_manifest(root: &Path, stage: Stage) -> Result<DatasetManifest> {
    Ok(DatasetManifest::load(&root.join(stage.name()).join("manifest.jsonl"))?)
}

// ---------------------------------------------------------------- stamp inputs

/// Checks a stage's own requirements before anything runs.
pub fn precheck(cfg: &PipelineConfig, stage: Stage) -> std::result::Result<(), CliError> {
    match stage {
        Stage::Compare if cfg.gold.is_none() => Err(CliError::Config(
            "stage `compare` needs a gold file: set `gold` in the config or pass --gold".into(),
        )),
        Stage::ReviewImport if cfg.review.verdicts.is_none() => Err(CliError::Config(
            "stage `review-import` needs a verdicts file: set `review.verdicts` in the config or pass --verdicts".into(),
        )),
        Stage::ReviewImport => {
            let p = cfg.review.verdicts.as_ref().expect("checked above");
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("verdicts file {} does not exist", p.display())))
            }
        }
        _ => Ok(()),
    }
}

/// The slice of the config a stage depends on.
pub fn config_fragment(cfg: &PipelineConfig, stage: Stage) -> Value {
    match stage {
        Stage::Mine => json!({
            "pairs": cfg.pairs,
            "tolerance": cfg.tolerance,
            "lexicons": cfg.lexicons.keys().collect::<Vec<_>>(),
        }),
        Stage::Segment => json!({
            "fixture": cfg.segmenter.fixture.is_some(),
            "command": cfg.segmenter.command,
            "few_shot": cfg.segmenter.few_shot,
        }),
        Stage::Split => json!({ "seed": cfg.seed, "split": cfg.split }),
        Stage::Train => json!({
            "seed": cfg.seed,
            "model": cfg.model,
            "train": cfg.train,
            "baselines": cfg.baselines,
        }),
        Stage::Eval => json!({ "seed": cfg.seed, "baselines": cfg.baselines }),
        Stage::ReviewExport => json!({ "seed": cfg.seed, "sample": cfg.review.sample }),
        _ => Value::Null,
    }
}

/// Files outside the output directory that a stage reads.
pub fn external_inputs(cfg: &PipelineConfig, stage: Stage) -> Result<Vec<(String, PathBuf)>> {
    let dir_files = |label: &str, dir: &Path| -> Result<Vec<(String, PathBuf)>> {
        Ok(walk(dir)?.into_iter().map(|rel| (format!("{label}/{rel}"), dir.join(rel))).collect())
    };
    Ok(match stage {
        Stage::Ingest => {
            let mut v = vec![("registry".to_string(), cfg.corpus.registry.clone())];
            v.extend(dir_files("subtitles", &cfg.corpus.subtitles)?);
            for t in registry(cfg)? {
                v.push((format!("audio/{}", t.talk_id), cfg.corpus.root.join(&t.audio_path)));
            }
            v
        }
        Stage::Mine => cfg.lexicons.iter().map(|(l, p)| (format!("lexicon/{l}"), p.clone())).collect(),
        Stage::Segment => cfg.segmenter.fixture.iter().map(|p| ("segmenter-fixture".to_string(), p.clone())).collect(),
        Stage::Align => dir_files("asr", &cfg.corpus.asr)?,
        Stage::Compare => cfg.gold.iter().map(|p| ("gold".to_string(), p.clone())).collect(),
        Stage::ReviewImport => cfg.review.verdicts.iter().map(|p| ("verdicts".to_string(), p.clone())).collect(),
        _ => Vec::new(),
    })
}

pub fn execute(cfg: &PipelineConfig, stage: Stage, dir: &Path) -> Result<Value> {
    let root = cfg.output.as_path();
    match stage {
        Stage::Ingest => ingest(cfg, dir),
        Stage::Mine => mine(cfg, root, dir),
        Stage::Segment => segment(cfg, root, dir),
        Stage::Align => align(cfg, root, dir),
        Stage::Prosody => prosody(root, dir),
        Stage::Assemble => assemble(root, dir),
        Stage::Split => split(cfg, root, dir),
        Stage::Stats => stats(root, dir),
        Stage::Train => train(cfg, root, dir),
        Stage::Eval => eval(cfg, root, dir),
        Stage::Compare => compare(cfg, root, dir),
        Stage::ReviewExport => review_export(cfg, root, dir),
        Stage::ReviewImport => review_import(cfg, root, dir),
    }
}

// ---------------------------------------------------------------- ingest

fn ingest(cfg: &PipelineConfig, dir: &Path) -> Result<Value> {
    let talks = registry(cfg)?;
    std::fs::create_dir_all(dir.join("audio"))?;
    let results: Vec<(IngestedTalk, Vec<String>)> = talks
        .par_iter()
        .map(|t| {
            let (src_path, fmt) = subtitle_file(cfg, &t.talk_id, &t.source_language)
                .ok_or_else(|| anyhow!("talk {}: no {} subtitles in {}", t.talk_id, t.source_language, cfg.corpus.subtitles.display()))?;
            let source = parse_subtitles(&t.talk_id, &read_text(&src_path)?.into_bytes(), fmt)
                .with_context(|| src_path.display().to_string())?;
            let mut translations = BTreeMap::new();
            let mut missing = Vec::new();
            for lang in &t.translations {
                match subtitle_file(cfg, &t.talk_id, lang) {
                    Some((p, fmt)) => {
                        let segs = parse_subtitles(&t.talk_id, &std::fs::read(&p)?, fmt).with_context(|| p.display().to_string())?;
                        translations.insert(lang.clone(), segs);
                    }
                    None => missing.push(format!("{}.{lang}", t.talk_id)),
                }
            }
            let wav = cfg.corpus.root.join(&t.audio_path);
            let audio = ingest_wav(&wav).with_context(|| format!("talk {}: {}", t.talk_id, wav.display()))?;
            let rel = format!("{}/audio/{}.wav", Stage::Ingest.name(), t.talk_id);
            write_wav(&dir.join(format!("audio/{}.wav", t.talk_id)), &audio.samples, audio.sample_rate)?;
            Ok((
                IngestedTalk {
                    talk_id: t.talk_id.clone(),
                    source_language: t.source_language.clone(),
                    source,
                    translations,
                    audio: rel,
                    duration: audio.duration(),
                },
                missing,
            ))
        })
        .collect::<Result<_>>()?;
    let missing: Vec<String> = results.iter().flat_map(|r| r.1.clone()).collect();
    for m in &missing {
        tracing::warn!(stage = "ingest", event = "missing_translation", subtitles = %m);
    }
    let talks: Vec<IngestedTalk> = results.into_iter().map(|r| r.0).collect();
    write_jsonl(&dir.join("corpus.jsonl"), &talks)?;
    Ok(json!({
        "talks": talks.len(),
        "source_segments": talks.iter().map(|t| t.source.len()).sum::<usize>(),
        "translations": count_by(talks.iter().flat_map(|t| t.translations.keys().map(|l| l.to_string()))),
        "missing_translations": missing,
        "audio_seconds": talks.iter().map(|t| t.duration).sum::<f64>(),
    }))
}

fn load_corpus(root: &Path) -> Result<BTreeMap<String, IngestedTalk>> {
    Ok(read_jsonl::<IngestedTalk>(&root.join("ingest/corpus.jsonl"))?
        .into_iter()
        .map(|t| (t.talk_id.clone(), t))
        .collect())
}

// ---------------------------------------------------------------- mine

fn mine(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let corpus = load_corpus(root)?;
    let lex = lexicons(cfg)?;
    let (mined, skipped): (Vec<_>, Vec<_>) = corpus.values().partition(|t| cfg.pairs.contains_key(t.source_language.as_str()));
    let subs: Vec<TalkSubtitles> = mined
        .iter()
        .map(|t| TalkSubtitles {
            talk_id: t.talk_id.clone(),
            source_language: t.source_language.clone(),
            source: t.source.clone(),
            translations: t.translations.clone(),
        })
        .collect();
    let out = mine_corpus(&subs, &lex, &cfg.tolerance, |src| {
        cfg.targets_for(src.as_str()).iter().map(|l| LanguageCode::new(l)).collect()
    })?;
    write_jsonl(&dir.join("instances.jsonl"), &out.instances)?;
    write_jsonl(&dir.join("candidates.jsonl"), &out.report)?;
    let candidates = out.candidates();
    let emitted = out.instances.len();
    Ok(json!({
        "candidates": candidates,
        "emitted": emitted,
        "dropped_by_filter": candidates - emitted,
        "dropped_by": out.dropped_by().into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
        "skipped_talks": skipped.iter().map(|t| &t.talk_id).collect::<Vec<_>>(),
    }))
}

// ---------------------------------------------------------------- segment

fn segmenter_port(cfg: &PipelineConfig) -> Result<Option<Box<dyn SegmenterPort>>> {
    if let Some(p) = &cfg.segmenter.fixture {
        let bytes = std::fs::read(p).with_context(|| p.display().to_string())?;
        return Ok(Some(Box::new(FixturePort::from_jsonl(&bytes)?)));
    }
    if let Some(cmd) = &cfg.segmenter.command {
        let (prog, args) = cmd.split_first().ok_or_else(|| anyhow!("segmenter.command is empty"))?;
        return Ok(Some(Box::new(SubprocessPort::spawn(prog, args)?)));
    }
    Ok(None)
}

fn segment(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let corpus = load_corpus(root)?;
    let instances: Vec<ImplicitInstance> = read_jsonl(&root.join("mine/instances.jsonl"))?;
    let mut contexts = BTreeMap::new();
    for inst in &instances {
        let talk = corpus
            .get(&inst.talk_id)
            .ok_or_else(|| anyhow!("instance {} names unknown talk {}", inst.instance_id, inst.talk_id))?;
        let anchor = RelationAnchor::from_position(inst.source_segment_index, &inst.position);
        let ctx = build_context_at(&talk.source, &anchor, &inst.source_language)
            .with_context(|| format!("instance {}", inst.instance_id))?;
        contexts.insert(inst.instance_id.clone(), (inst.talk_id.clone(), ctx));
    }
    let port = segmenter_port(cfg)?;
    let items = contexts.iter().map(|(id, (_, ctx))| (id.clone(), ctx.clone())).collect();
    let results = segment_many(items, port.as_deref(), cfg.segmenter.few_shot, cfg.segmenter.max_in_flight)?;
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (id, r) in results {
        let (talk_id, ctx) = &contexts[&id];
        match r {
            Ok(seg) => {
                let text = ctx.text();
                kept.push(SegmentedInstance {
                    instance_id: id.clone(),
                    talk_id: talk_id.clone(),
                    arg1_text: seg.spans.arg1_text(&text).to_string(),
                    arg2_text: seg.spans.arg2_text(&text).to_string(),
                    context: ctx.clone(),
                    spans: seg.spans,
                    trail: seg.trail,
                })
            }
            Err(trail) => drops.push(Dropped {
                instance_id: id.clone(),
                talk_id: talk_id.clone(),
                code: DropCode::SegInvalid,
                trail,
            }),
        }
    }
    write_jsonl(&dir.join("segments.jsonl"), &kept)?;
    write_jsonl(&dir.join("drops.jsonl"), &drops)?;
    Ok(json!({
        "instances": contexts.len(),
        "segmented": kept.len(),
        "external": kept.iter().filter(|s| s.spans.source == SpanSource::External).count(),
        "fallback": kept.iter().filter(|s| s.spans.source == SpanSource::Fallback).count(),
        "dropped_by": { DropCode::SegInvalid.as_str(): drops.len() },
    }))
}

// ---------------------------------------------------------------- align

fn align(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let corpus = load_corpus(root)?;
    let mut by_talk: BTreeMap<String, Vec<SegmentedInstance>> = BTreeMap::new();
    for s in read_jsonl::<SegmentedInstance>(&root.join("segment/segments.jsonl"))? {
        by_talk.entry(s.talk_id.clone()).or_default().push(s);
    }
    std::fs::create_dir_all(dir.join("clips"))?;
    let per_talk: Vec<(Vec<AlignedInstance>, Vec<Dropped>)> = by_talk
        .par_iter()
        .map(|(talk_id, segs)| {
            let talk = corpus.get(talk_id).ok_or_else(|| anyhow!("unknown talk {talk_id}"))?;
            let audio = read_wav(&root.join(&talk.audio))?;
            let asr = cfg.corpus.asr.join(format!("{talk_id}.words.jsonl"));
            let words = if asr.is_file() {
                parse_word_timestamps(&std::fs::read(&asr)?).with_context(|| asr.display().to_string())?
            } else {
                Vec::new()
            };
            let mut kept = Vec::new();
            let mut drops = Vec::new();
            for s in segs {
                let arg = |text: &str, which: &str| -> idrkit::Result<AlignedArg> {
                    let (span, m) = align_span_detailed(text, &words)?;
                    let clip = cut_audio(&audio, span, talk_id)?;
                    let rel = format!("clips/{}.{which}.wav", s.instance_id);
                    write_wav(&dir.join(&rel), &clip.samples, clip.sample_rate)?;
                    Ok(AlignedArg {
                        span,
                        distance: m.distance,
                        clip: format!("{}/{rel}", Stage::Align.name()),
                        words: words[m.first..m.end].to_vec(),
                        anomaly: energy_anomaly(&clip).map(str::to_string),
                    })
                };
                match arg(&s.arg1_text, "arg1").and_then(|a1| Ok((a1, arg(&s.arg2_text, "arg2")?))) {
                    Ok((arg1, arg2)) => kept.push(AlignedInstance {
                        instance_id: s.instance_id.clone(),
                        talk_id: talk_id.clone(),
                        arg1,
                        arg2,
                    }),
                    Err(e) => {
                        let stale = dir.join(format!("clips/{}.arg1.wav", s.instance_id));
                        if stale.exists() {
                            std::fs::remove_file(stale)?;
                        }
                        let mut trail = s.trail.clone();
                        trail.push(FilterRecord::fail("alignment", e.to_string()));
                        drops.push(Dropped {
                            instance_id: s.instance_id.clone(),
                            talk_id: talk_id.clone(),
                            code: DropCode::Unalignable,
                            trail,
                        });
                    }
                }
            }
            Ok((kept, drops))
        })
        .collect::<Result<_>>()?;
    let (mut kept, mut drops): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for (k, d) in per_talk {
        kept.extend(k);
        drops.extend(d);
    }
    kept.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    drops.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    write_jsonl(&dir.join("aligned.jsonl"), &kept)?;
    write_jsonl(&dir.join("drops.jsonl"), &drops)?;
    let anomalies = count_by(kept.iter().flat_map(|a| [&a.arg1.anomaly, &a.arg2.anomaly]).flatten().cloned());
    Ok(json!({
        "aligned": kept.len(),
        "dropped_by": { DropCode::Unalignable.as_str(): drops.len() },
        "energy_anomalies": anomalies,
    }))
}

// ---------------------------------------------------------------- prosody

fn load_clip(root: &Path, talk_id: &str, arg: &AlignedArg) -> Result<AudioClip> {
    let audio = read_wav(&root.join(&arg.clip))?;
    Ok(AudioClip {
        samples: audio.samples,
        sample_rate: audio.sample_rate,
        origin: ClipOrigin {
            talk_id: talk_id.to_string(),
            span: arg.span,
        },
    })
}

fn prosody(root: &Path, dir: &Path) -> Result<Value> {
    let aligned: Vec<AlignedInstance> = read_jsonl(&root.join("align/aligned.jsonl"))?;
    std::fs::create_dir_all(dir.join("blobs"))?;
    let raw: Vec<(ProsodyMatrix, ProsodyMatrix)> = aligned
        .par_iter()
        .map(|a| {
            let mut out = Vec::with_capacity(2);
            for (which, arg) in [("arg1", &a.arg1), ("arg2", &a.arg2)] {
                let clip = load_clip(root, &a.talk_id, arg)?;
                let lm = compute_logmel(&clip)?;
                write_logmel_blob(&dir.join(format!("blobs/{}.{which}.logmel", a.instance_id)), &lm)?;
                out.push(extract_raw_prosody(&clip, &arg.words));
            }
            let arg2 = out.pop().expect("two args");
            Ok((out.pop().expect("two args"), arg2))
        })
        .collect::<Result<_>>()?;
    // statistics accumulate in instance-id order so reruns match bit for bit
    let mut stats: BTreeMap<String, TalkProsodyStats> = BTreeMap::new();
    for (a, (p1, p2)) in aligned.iter().zip(&raw) {
        let s = stats.entry(a.talk_id.clone()).or_default();
        s.add_matrix(p1);
        s.add_matrix(p2);
    }
    let mut features = Vec::with_capacity(aligned.len());
    for (a, (p1, p2)) in aligned.iter().zip(&raw) {
        let s = &stats[&a.talk_id];
        let (z1, z2) = (s.normalize(p1), s.normalize(p2));
        for (which, z) in [("arg1", &z1), ("arg2", &z2)] {
            if z.rows.iter().flatten().any(|v| !v.is_finite()) {
                bail!("instance {}: non-finite prosody in {which}", a.instance_id);
            }
            write_prosody_blob(&dir.join(format!("blobs/{}.{which}.prosody", a.instance_id)), z)?;
        }
        features.push(ProsodyFeatures {
            instance_id: a.instance_id.clone(),
            talk_id: a.talk_id.clone(),
            arg1: z1,
            arg2: z2,
            arg1_logmel: format!("prosody/blobs/{}.arg1.logmel", a.instance_id),
            arg2_logmel: format!("prosody/blobs/{}.arg2.logmel", a.instance_id),
        });
    }
    write_jsonl(&dir.join("features.jsonl"), &features)?;
    write_json(&dir.join("talk_stats.json"), &stats)?;
    Ok(json!({
        "instances": features.len(),
        "talks": stats.len(),
        "words": features.iter().map(|f| f.arg1.len() + f.arg2.len()).sum::<usize>(),
    }))
}

fn load_features(root: &Path) -> Result<BTreeMap<String, ProsodyFeatures>> {
    Ok(read_jsonl::<ProsodyFeatures>(&root.join("prosody/features.jsonl"))?
        .into_iter()
        .map(|f| (f.instance_id.clone(), f))
        .collect())
}

// ---------------------------------------------------------------- assemble

fn assemble(root: &Path, dir: &Path) -> Result<Value> {
    let instances: BTreeMap<String, ImplicitInstance> = read_jsonl::<ImplicitInstance>(&root.join("mine/instances.jsonl"))?
        .into_iter()
        .map(|i| (i.instance_id.clone(), i))
        .collect();
    let segments: BTreeMap<String, SegmentedInstance> = read_jsonl::<SegmentedInstance>(&root.join("segment/segments.jsonl"))?
        .into_iter()
        .map(|s| (s.instance_id.clone(), s))
        .collect();
    let features = load_features(root)?;
    let aligned: Vec<AlignedInstance> = read_jsonl(&root.join("align/aligned.jsonl"))?;
    let mut entries = Vec::new();
    for a in &aligned {
        if !features.contains_key(&a.instance_id) {
            continue;
        }
        let inst = instances.get(&a.instance_id).ok_or_else(|| anyhow!("{} missing from mining output", a.instance_id))?;
        let seg = segments.get(&a.instance_id).ok_or_else(|| anyhow!("{} missing from segmentation output", a.instance_id))?;
        entries.push(ManifestEntry {
            instance_id: a.instance_id.clone(),
            talk_id: a.talk_id.clone(),
            language: inst.source_language.clone(),
            witness_language: Some(inst.witness_language.clone()),
            label: inst.label,
            arg1_text: seg.arg1_text.clone(),
            arg2_text: seg.arg2_text.clone(),
            arg1_clip: a.arg1.clip.clone(),
            arg2_clip: a.arg2.clip.clone(),
            sentence_index: Some(seg.context.origin.sentence_index),
            inter_sentential: seg.context.is_inter_sentential(),
            split: Split::Unassigned,
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&dir.join("manifest.jsonl"))?;

    let mine_report: Value = serde_json::from_str(&read_text(&root.join("mine/report.json"))?)?;
    let mut dropped: BTreeMap<String, usize> = serde_json::from_value(mine_report["dropped_by"].clone()).unwrap_or_default();
    for stage in ["segment", "align"] {
        for d in read_jsonl::<Dropped>(&root.join(stage).join("drops.jsonl"))? {
            *dropped.entry(d.code.to_string()).or_insert(0) += 1;
        }
    }
    Ok(json!({
        "instances": manifest.instances.len(),
        "languages": count_by(manifest.instances.iter().map(|e| e.language.to_string())),
        "labels": count_by(manifest.instances.iter().map(|e| e.label.to_string())),
        "dropped_by": dropped,
        "provenance_hash": manifest.provenance_hash(),
    }))
}

// ---------------------------------------------------------------- split / stats

fn split(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let manifest = load_manifest(root, Stage::Assemble)?;
    for lang in manifest.languages() {
        cfg.split_spec(lang.as_str()).validate()?;
    }
    let out = split_by_language(&manifest, |l| cfg.split_spec(l.as_str()))?;
    out.save(&dir.join("manifest.jsonl"))?;
    let mut per_lang: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
    for e in &out.instances {
        *per_lang.entry(e.language.to_string()).or_default().entry(e.split.as_str()).or_insert(0) += 1;
    }
    Ok(json!({
        "instances": out.instances.len(),
        "splits": per_lang,
        "provenance_hash": out.provenance_hash(),
    }))
}

fn stats(root: &Path, dir: &Path) -> Result<Value> {
    let report = stats_report(&load_manifest(root, Stage::Split)?);
    std::fs::write(dir.join("stats.json"), report.to_json())?;
    std::fs::write(dir.join("stats.txt"), report.to_text())?;
    Ok(json!({ "total": report.total }))
}

// ---------------------------------------------------------------- train / eval

struct Loaded<'a> {
    entry: &'a ManifestEntry,
    features: &'a ProsodyFeatures,
}

fn select<'a>(manifest: &'a DatasetManifest, features: &'a BTreeMap<String, ProsodyFeatures>, split: Split) -> Result<Vec<Loaded<'a>>> {
    manifest
        .instances
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let features = features
                .get(&e.instance_id)
                .ok_or_else(|| anyhow!("no prosody features for {}", e.instance_id))?;
            Ok(Loaded { entry: e, features })
        })
        .collect()
}

fn to_samples(root: &Path, items: &[Loaded], backbone: &StubBackbone) -> Result<Vec<Sample>> {
    items
        .par_iter()
        .map(|it| {
            let lm1 = read_logmel_blob(&root.join(&it.features.arg1_logmel))?;
            let lm2 = read_logmel_blob(&root.join(&it.features.arg2_logmel))?;
            let states = backbone.encode(&encode_pair(&it.entry.arg1_text, &it.entry.arg2_text), (&lm1, &lm2))?;
            Ok(Sample {
                arg1: ArgInput {
                    h: states.arg1(),
                    prosody: it.features.arg1.to_array(),
                    logmel: lm1,
                },
                arg2: ArgInput {
                    h: states.arg2(),
                    prosody: it.features.arg2.to_array(),
                    logmel: lm2,
                },
                label: it.entry.label.index(),
            })
        })
        .collect()
}

fn baseline_inputs<'a>(items: &'a [Loaded<'a>]) -> Vec<BaselineInput<'a>> {
    items
        .iter()
        .map(|it| BaselineInput {
            arg1_text: &it.entry.arg1_text,
            arg2_text: &it.entry.arg2_text,
            prosody: Some((&it.features.arg1, &it.features.arg2)),
        })
        .collect()
}

fn baseline_name(kind: BaselineKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).expect("kind serializes to a string")
}

fn nonempty<'a>(items: Vec<Loaded<'a>>, split: Split) -> Result<Vec<Loaded<'a>>> {
    if items.is_empty() {
        bail!("the {} split is empty; the dataset is too small for this split configuration", split.as_str());
    }
    Ok(items)
}

fn train(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let manifest = load_manifest(root, Stage::Split)?;
    let features = load_features(root)?;
    let tr = nonempty(select(&manifest, &features, Split::Train)?, Split::Train)?;
    let va = nonempty(select(&manifest, &features, Split::Validation)?, Split::Validation)?;
    let fcfg = cfg.model.fusion();
    let backbone = StubBackbone::new(fcfg.d, cfg.seed);
    let train_set = to_samples(root, &tr, &backbone)?;
    let val_set = to_samples(root, &va, &backbone)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;

    let fusion_dir = dir.join("fusion");
    std::fs::create_dir_all(&fusion_dir)?;
    let fitted = fit(&fcfg, &tc, &train_set, &val_set, Some(&fusion_dir)).map_err(|f| anyhow!("fusion model: {f}"))?;
    write_history_csv(&fusion_dir.join("history.csv"), &fitted.history)?;

    let labels: Vec<usize> = tr.iter().map(|it| it.entry.label.index()).collect();
    let weights = tc.class_weights.clone().unwrap_or_else(|| class_weights(&labels, fcfg.num_classes));
    let inputs = baseline_inputs(&tr);
    let base_dir = dir.join("baselines");
    std::fs::create_dir_all(&base_dir)?;
    let mut base_report = BTreeMap::new();
    for &kind in &cfg.baselines {
        let (model, fit) = Baseline::fit(kind, &inputs, &labels, &weights, &LogRegConfig::default())
            .with_context(|| format!("baseline {}", baseline_name(kind)))?;
        model.to_checkpoint()?.save(&base_dir.join(format!("{}.ckpt", baseline_name(kind))))?;
        base_report.insert(
            baseline_name(kind),
            json!({ "converged": fit.converged, "iterations": fit.objective.len(), "objective": fit.objective.last() }),
        );
    }
    Ok(json!({
        "train": tr.len(),
        "validation": va.len(),
        "best_epoch": fitted.best_epoch,
        "steps": fitted.steps,
        "class_weights": fitted.class_weights,
        "history": fitted.history,
        "baselines": base_report,
    }))
}

fn eval(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let manifest = load_manifest(root, Stage::Split)?;
    let features = load_features(root)?;
    let te = nonempty(select(&manifest, &features, Split::Test)?, Split::Test)?;
    let gold: Vec<usize> = te.iter().map(|it| it.entry.label.index()).collect();

    let ckpt = Checkpoint::load(&root.join("train/fusion/best.ckpt"))?;
    let (fcfg, params) = ModelParams::from_checkpoint(&ckpt)?;
    let backbone = StubBackbone::new(fcfg.d, cfg.seed);
    let samples = to_samples(root, &te, &backbone)?;
    let mut predictions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    predictions.insert(
        "fusion".into(),
        samples.iter().map(|s| predict(&params, &fcfg, s).map(|p| p.0)).collect::<idrkit::Result<_>>()?,
    );
    let inputs = baseline_inputs(&te);
    for &kind in &cfg.baselines {
        let name = baseline_name(kind);
        let b = Baseline::from_checkpoint(&Checkpoint::load(&root.join(format!("train/baselines/{name}.ckpt")))?)?;
        predictions.insert(name, inputs.iter().map(|x| b.predict(x)).collect::<idrkit::Result<_>>()?);
    }
    let metrics = predictions
        .iter()
        .map(|(name, p)| Ok((name.clone(), evaluate(p, &gold)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    let rows: Vec<Value> = te
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let mut row = json!({ "instance_id": it.entry.instance_id, "gold": it.entry.label });
            for (name, p) in &predictions {
                row[name] = json!(idrkit::corpus::RelationLabel::from_index(p[i]));
            }
            row
        })
        .collect();
    write_jsonl(&dir.join("predictions.jsonl"), &rows)?;
    Ok(json!({
        "test": te.len(),
        "macro_f1": metrics.iter().map(|(k, m)| (k.clone(), m.macro_f1)).collect::<BTreeMap<_, _>>(),
    }))
}

// ---------------------------------------------------------------- compare

fn compare(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let path = cfg.gold.as_ref().expect("precheck requires gold");
    let gold = parse_gold(&read_text(path)?)?;
    let ours = load_manifest(root, Stage::Assemble)?;
    let cmp = compare_to_gold(&ours, &gold);
    write_json(&dir.join("gold_comparison.json"), &cmp)?;
    Ok(json!({
        "gold": cmp.gold_total,
        "mined_inter": cmp.mined_inter,
        "matching": cmp.matching,
        "new_inter": cmp.new_inter,
        "intra": cmp.intra_count,
    }))
}

// ---------------------------------------------------------------- review

fn review_export(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let manifest = load_manifest(root, Stage::Split)?;
    let (picked, missing) = export_session(&manifest, root, &dir.join("session"), cfg.review.sample, cfg.seed)?;
    if !missing.is_empty() {
        tracing::warn!(stage = "review-export", event = "missing_clips", count = missing.len());
    }
    Ok(json!({ "exported": picked.len(), "missing_clips": missing }))
}

fn review_import(cfg: &PipelineConfig, root: &Path, dir: &Path) -> Result<Value> {
    let path = cfg.review.verdicts.as_ref().expect("precheck requires verdicts");
    let verdicts = parse_verdicts(&read_text(path)?).with_context(|| path.display().to_string())?;
    let manifest = load_manifest(root, Stage::Split)?;
    let known: std::collections::BTreeSet<&str> = manifest.instances.iter().map(|e| e.instance_id.as_str()).collect();
    let unknown: Vec<&str> = verdicts.iter().map(|v| v.instance_id.as_str()).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        bail!("verdicts name {} instance(s) not in the split manifest, e.g. {}", unknown.len(), unknown[0]);
    }
    let merged = merge_verdicts(&verdicts);
    if !merged.is_empty() {
        std::fs::write(dir.join("verdicts.jsonl"), write_verdicts(&merged)?)?;
    }
    let filter = ReleaseFilter::from_verdicts(&merged);
    write_json(&dir.join("release_filter.json"), &filter)?;
    let report = error_report(&merged);
    write_json(&dir.join("error_report.json"), &report)?;
    let release = filter.apply(&manifest);
    std::fs::create_dir_all(dir.join("release"))?;
    release.save(&dir.join("release/manifest.jsonl"))?;
    let states = count_by(filter.states.values().map(|s| match s {
        ReleaseState::Retained => "retained",
        ReleaseState::Excluded { .. } => "excluded",
        ReleaseState::NeedsAdjudication => "needs_adjudication",
    }));
    Ok(json!({
        "verdicts": merged.len(),
        "reviewed": states,
        "released": release.instances.len(),
        "withheld": manifest.instances.len() - release.instances.len(),
    }))
}
