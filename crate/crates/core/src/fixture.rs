//! Synthetic corpora with known answers.
//!
//! [`PlantedCorpus`] is a tiny three-talk English corpus translated into
//! French and German. Twelve translations add a connective the English lacks
//! (the planted events); eight more look like candidates but must be dropped.
//! Everything is generated from code, audio included, so the whole pipeline
//! can run offline.
//!
//! [`published_manifest`] builds a manifest whose counts replicate the
//! released dataset tables, for exercising the statistics report.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, write_word_timestamps, WordTimestamp};
use crate::corpus::{write_srt, LanguageCode, Lexicon, RelationLabel, SubtitleSegment, Talk};
use crate::dataset::{DatasetManifest, GoldRelation, ManifestEntry, Scope, Split};
use crate::error::{Error, Result};
use crate::miner::TalkSubtitles;
use crate::text::tokenize;
use crate::trail::DropCode;

pub const SEGMENTS_PER_TALK: usize = 10;
const SEG_STEP_MS: u64 = 2500;
const SEG_LEN_MS: u64 = 2000;

pub const EN_LEXICON: &str = "\
surface\tsense\tambiguous
therefore\tcause-effect\tfalse
so\tcause-effect\tfalse
because\tcause-effect\tfalse
however\tcontrast\tfalse
but\tcontrast\tfalse
then\ttemporal\tfalse
afterwards\ttemporal\tfalse
for example\telaboration\tfalse
and\telaboration\ttrue
";

pub const FR_LEXICON: &str = "\
surface\tsense\tambiguous
donc\tcause-effect\tfalse
cependant\tcontrast\tfalse
ensuite\ttemporal\tfalse
par exemple\telaboration\tfalse
";

pub const DE_LEXICON: &str = "\
surface\tsense\tambiguous
deshalb\tcause-effect\tfalse
so\tcause-effect\tfalse
aber\tcontrast\tfalse
danach\ttemporal\tfalse
zum beispiel\telaboration\tfalse
";

// Thirty distinct connective-free sentences, ten per talk.
const NEUTRAL: [&str; 30] = [
    "We walked to the old market.",
    "The river was quiet that morning.",
    "My grandmother grew tomatoes.",
    "Our team built a small robot.",
    "The city lights were bright.",
    "Nobody expected the storm.",
    "A teacher changed my life.",
    "The library opened at nine.",
    "We counted every single bird.",
    "The experiment took three years.",
    "Music filled the whole room.",
    "Children played near the harbor.",
    "The bridge needed new paint.",
    "My father fixed old radios.",
    "We planted trees along the road.",
    "The hospital hired more nurses.",
    "Rain fell on the dry fields.",
    "The museum lost its funding.",
    "Engineers tested the new engine.",
    "Our village had one doctor.",
    "The ocean covers most of the planet.",
    "Farmers sold honey at the fair.",
    "The students wrote a short play.",
    "Snow closed the mountain pass.",
    "We measured the water every week.",
    "The factory made glass bottles.",
    "Her paintings hung in the hall.",
    "The train arrived at midnight.",
    "Scientists mapped the coral reef.",
    "The garden smelled of mint.",
];

const EN_EXPLICIT: [&str; 2] = ["However the results surprised us.", "But the plan worked anyway."];

fn fr_neutral(n: usize) -> String {
    format!("Nous avons vu la scène {n}.")
}

fn de_neutral(n: usize) -> String {
    format!("Wir sahen die Szene {n}.")
}

fn fr_connective(l: RelationLabel) -> &'static str {
    match l {
        RelationLabel::CauseEffect => "Donc",
        RelationLabel::Contrast => "Cependant",
        RelationLabel::Temporal => "Ensuite",
        RelationLabel::Elaboration => "Par exemple",
    }
}

fn de_connective(l: RelationLabel) -> &'static str {
    match l {
        RelationLabel::CauseEffect => "Deshalb",
        RelationLabel::Contrast => "Aber",
        RelationLabel::Temporal => "Danach",
        RelationLabel::Elaboration => "Zum Beispiel",
    }
}

fn explicitated(lang: &str, label: RelationLabel, n: usize) -> String {
    match lang {
        "fr" => format!("{} nous avons vu la scène {n}.", fr_connective(label)),
        _ => format!("{} wir sahen die Szene {n}.", de_connective(label)),
    }
}

/// A translation that adds a connective the source lacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub talk_id: String,
    pub segment_index: usize,
    pub label: RelationLabel,
    /// Language whose translation carries the connective.
    pub witness: LanguageCode,
}

/// A candidate that must be dropped, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distractor {
    pub talk_id: String,
    pub segment_index: usize,
    pub language: LanguageCode,
    pub code: DropCode,
}

#[derive(Debug, Clone)]
pub struct PlantedTalk {
    pub talk: Talk,
    pub source: Vec<SubtitleSegment>,
    pub translations: BTreeMap<LanguageCode, Vec<SubtitleSegment>>,
    pub words: Vec<WordTimestamp>,
    pub sample_rate: u32,
}

impl PlantedTalk {
    pub fn subtitles(&self) -> TalkSubtitles {
        TalkSubtitles {
            talk_id: self.talk.talk_id.clone(),
            source_language: self.talk.source_language.clone(),
            source: self.source.clone(),
            translations: self.translations.clone(),
        }
    }

    /// Each word is a short harmonic tone whose pitch depends on the word;
    /// gaps between words are silent.
    pub fn synthesize_audio(&self) -> Vec<f32> {
        let sr = self.sample_rate as f32;
        let total_s = (SEGMENTS_PER_TALK as u64 * SEG_STEP_MS) as f32 / 1000.0;
        let mut out = vec![0f32; (total_s * sr) as usize];
        for w in &self.words {
            let h = w.word.bytes().fold(7u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
            let f0 = 110.0 + 15.0 * (h % 8) as f32;
            let s = (w.start as f32 * sr) as usize;
            let e = ((w.end as f32 * sr) as usize).min(out.len());
            let ramp = (0.01 * sr) as usize;
            for (k, x) in out[s..e].iter_mut().enumerate() {
                let t = k as f32 / sr;
                let env = (k.min(e - s - 1 - k) as f32 / ramp as f32).min(1.0);
                *x = 0.3 * env * ((2.0 * PI * f0 * t).sin() + 0.4 * (4.0 * PI * f0 * t).sin());
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub talks: Vec<PlantedTalk>,
    pub events: Vec<PlantedEvent>,
    pub distractors: Vec<Distractor>,
    /// Sentence-indexed reference relations for gold comparison.
    pub gold: Vec<GoldRelation>,
}

fn segment(talk_id: &str, i: usize, text: String) -> SubtitleSegment {
    let start_ms = i as u64 * SEG_STEP_MS;
    SubtitleSegment {
        talk_id: talk_id.to_string(),
        index: i,
        start_ms,
        end_ms: start_ms + SEG_LEN_MS,
        text,
    }
}

fn words_for(segments: &[SubtitleSegment]) -> Vec<WordTimestamp> {
    let mut out = Vec::new();
    for s in segments {
        let toks = tokenize(&s.text);
        let slot = (s.end() - s.start()) / toks.len() as f64;
        for (j, t) in toks.iter().enumerate() {
            let start = s.start() + j as f64 * slot;
            out.push(WordTimestamp {
                word: s.text[t.start..t.end].to_string(),
                start: (start * 1000.0).round() / 1000.0,
                end: ((start + 0.8 * slot) * 1000.0).round() / 1000.0,
            });
        }
    }
    out
}

impl PlantedCorpus {
    /// Three talks, ten segments each. Segments 1–4 of every talk host the
    /// planted events, 5–6 the distractors; 0 and 7–9 are plain.
    pub fn generate() -> Self {
        let (en, fr, de) = (LanguageCode::new("en"), LanguageCode::new("fr"), LanguageCode::new("de"));
        let mut talks = Vec::new();
        let mut events = Vec::new();
        let mut distractors = Vec::new();
        let mut gold = Vec::new();
        for t in 0..3 {
            let talk_id = format!("talk{:02}", t + 1);
            let mut src: Vec<SubtitleSegment> = (0..SEGMENTS_PER_TALK)
                .map(|i| segment(&talk_id, i, NEUTRAL[t * SEGMENTS_PER_TALK + i].to_string()))
                .collect();
            let n = |i: usize| t * SEGMENTS_PER_TALK + i;
            let mut tr_fr: Vec<SubtitleSegment> = (0..SEGMENTS_PER_TALK).map(|i| segment(&talk_id, i, fr_neutral(n(i)))).collect();
            let mut tr_de: Vec<SubtitleSegment> = (0..SEGMENTS_PER_TALK).map(|i| segment(&talk_id, i, de_neutral(n(i)))).collect();

            for j in 0..4 {
                let i = 1 + j;
                let label = RelationLabel::ALL[(t * 4 + j) % 4];
                let witness = if (t + j) % 2 == 0 { &fr } else { &de };
                let text = explicitated(witness.as_str(), label, n(i));
                if witness == &fr {
                    tr_fr[i].text = text;
                } else {
                    tr_de[i].text = text;
                }
                events.push(PlantedEvent {
                    talk_id: talk_id.clone(),
                    segment_index: i,
                    label,
                    witness: witness.clone(),
                });
            }
            let mut distract = |i: usize, lang: &LanguageCode, code| {
                distractors.push(Distractor {
                    talk_id: talk_id.clone(),
                    segment_index: i,
                    language: lang.clone(),
                    code,
                })
            };
            match t {
                0 | 1 => {
                    // the other translation explicitates segment 1 the same way
                    let label = RelationLabel::ALL[(t * 4) % 4];
                    let (other, tr) = if t == 0 { (&de, &mut tr_de) } else { (&fr, &mut tr_fr) };
                    tr[1].text = explicitated(other.as_str(), label, n(1));
                    // dedup keeps the alphabetically first witness
                    let ev = events.len() - 4;
                    let (keep, drop) = if *other < events[ev].witness {
                        (other.clone(), events[ev].witness.clone())
                    } else {
                        (events[ev].witness.clone(), other.clone())
                    };
                    events[ev].witness = keep;
                    distract(1, &drop, DropCode::Dup);

                    // the source already says it
                    src[5].text = EN_EXPLICIT[t].to_string();
                    let lang = if t == 0 { &fr } else { &de };
                    let tr = if t == 0 { &mut tr_fr } else { &mut tr_de };
                    tr[5].text = explicitated(lang.as_str(), RelationLabel::Contrast, n(5));
                    distract(5, lang, DropCode::SrcExplicit);

                    // translation far too short for its source
                    let lang = if t == 0 { &de } else { &fr };
                    let tr = if t == 0 { &mut tr_de } else { &mut tr_fr };
                    tr[6].text = explicitated(lang.as_str(), RelationLabel::Temporal, n(6));
                    tr[6].end_ms = tr[6].start_ms + 700;
                    distract(6, lang, DropCode::DurRatio);
                }
                _ => {
                    tr_de[5].text = format!("So schön war die Szene {}.", n(5));
                    distract(5, &de, DropCode::NonDiscourseIntensifier);
                    tr_de[6].text = format!("So, wir sahen die Szene {}.", n(6));
                    distract(6, &de, DropCode::NonDiscourseFiller);
                }
            }

            // reference annotation: two of the planted events plus one the miner misses
            for (i, label) in [(1, events[t * 4].label), (2, events[t * 4 + 1].label), (8, RelationLabel::Elaboration)] {
                gold.push(GoldRelation {
                    talk_id: talk_id.clone(),
                    sentence_index: i,
                    label,
                    inter_or_intra: Scope::Inter,
                });
            }

            let words = words_for(&src);
            talks.push(PlantedTalk {
                talk: Talk {
                    talk_id: talk_id.clone(),
                    source_language: en.clone(),
                    translations: [fr.clone(), de.clone()].into_iter().collect(),
                    audio_path: format!("audio/{talk_id}.wav"),
                },
                source: src,
                translations: [(fr.clone(), tr_fr), (de.clone(), tr_de)].into_iter().collect(),
                words,
                // one talk arrives at a non-canonical rate
                sample_rate: if t == 2 { 22_050 } else { 16_000 },
            });
        }
        PlantedCorpus {
            talks,
            events,
            distractors,
            gold,
        }
    }

    pub fn lexicons() -> Result<BTreeMap<LanguageCode, Lexicon>> {
        let mut m = BTreeMap::new();
        for (code, tsv) in [("en", EN_LEXICON), ("fr", FR_LEXICON), ("de", DE_LEXICON)] {
            let lang = LanguageCode::new(code);
            m.insert(lang.clone(), Lexicon::from_tsv(tsv.as_bytes(), &lang)?);
        }
        Ok(m)
    }

    pub fn subtitles(&self) -> Vec<TalkSubtitles> {
        self.talks.iter().map(PlantedTalk::subtitles).collect()
    }

    /// Writes the corpus under `root`:
    ///
    /// ```text
    /// talks.jsonl
    /// lexicons/{en,fr,de}.tsv
    /// subtitles/<talk>.<lang>.srt
    /// audio/<talk>.wav
    /// asr/<talk>.words.jsonl
    /// gold.jsonl
    /// ```
    pub fn write_to(&self, root: &Path) -> Result<()> {
        let write = |rel: &str, bytes: &[u8]| -> Result<()> {
            let p = root.join(rel);
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        let mut registry = String::new();
        for t in &self.talks {
            registry.push_str(&serde_json::to_string(&t.talk)?);
            registry.push('\n');
            let id = &t.talk.talk_id;
            write(&format!("subtitles/{id}.en.srt"), write_srt(&t.source).as_bytes())?;
            for (lang, segs) in &t.translations {
                write(&format!("subtitles/{id}.{lang}.srt"), write_srt(segs).as_bytes())?;
            }
            write(&format!("asr/{id}.words.jsonl"), write_word_timestamps(&t.words).as_bytes())?;
            let wav = root.join(&t.talk.audio_path);
            if let Some(dir) = wav.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_wav(&wav, &t.synthesize_audio(), t.sample_rate)?;
        }
        write("talks.jsonl", registry.as_bytes())?;
        write("lexicons/en.tsv", EN_LEXICON.as_bytes())?;
        write("lexicons/fr.tsv", FR_LEXICON.as_bytes())?;
        write("lexicons/de.tsv", DE_LEXICON.as_bytes())?;
        let mut gold = String::new();
        for g in &self.gold {
            gold.push_str(&serde_json::to_string(g)?);
            gold.push('\n');
        }
        write("gold.jsonl", gold.as_bytes())
    }
}

// ---------------------------------------------------------------- published counts

/// (relations, talks) per split, then per-class totals, for one language.
struct Published {
    language: &'static str,
    splits: [(usize, usize); 3],
    labels: [usize; 4],
}

const PUBLISHED: [Published; 3] = [
    Published {
        language: "en",
        splits: [(1563, 188), (520, 78), (520, 82)],
        labels: [593, 704, 546, 760],
    },
    Published {
        language: "es",
        splits: [(101, 49), (100, 33), (201, 82)],
        labels: [97, 101, 73, 131],
    },
    Published {
        language: "fr",
        splits: [(457, 130), (124, 29), (249, 58)],
        labels: [169, 199, 127, 335],
    },
];

/// Largest-remainder share of `total` proportional to `weights`.
fn apportion(total: usize, weights: &[usize; 4]) -> [usize; 4] {
    let sum: usize = weights.iter().sum();
    let mut out = [0usize; 4];
    let mut rem: Vec<(usize, usize)> = Vec::new();
    for c in 0..4 {
        let exact = total * weights[c];
        out[c] = exact / sum;
        rem.push((exact % sum, c));
    }
    let short = total - out.iter().sum::<usize>();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rem.iter().take(short) {
        out[c] += 1;
    }
    out
}

/// Per-split class counts: train and validation take a proportional share,
/// test takes whatever is left of each class.
pub fn published_cells(language: &str) -> Option<[[usize; 4]; 3]> {
    let p = PUBLISHED.iter().find(|p| p.language == language)?;
    let train = apportion(p.splits[0].0, &p.labels);
    let val = apportion(p.splits[1].0, &p.labels);
    let test: [usize; 4] = std::array::from_fn(|c| p.labels[c] - train[c] - val[c]);
    Some([train, val, test])
}

/// A manifest with one entry per released relation, talk-disjoint and already
/// split, reproducing the published per-language split and class counts.
pub fn published_manifest() -> DatasetManifest {
    let mut out = Vec::new();
    for p in &PUBLISHED {
        let lang = LanguageCode::new(p.language);
        let cells = published_cells(p.language).expect("language is published");
        for (s, split) in Split::ASSIGNABLE.iter().enumerate() {
            let (_, talks) = p.splits[s];
            let mut k = 0;
            for (c, &label) in RelationLabel::ALL.iter().enumerate() {
                for _ in 0..cells[s][c] {
                    let talk = k % talks;
                    let id = format!("{}-{}-{:04}", p.language, split.as_str(), k);
                    out.push(ManifestEntry {
                        instance_id: id.clone(),
                        talk_id: format!("{}-{}-t{:03}", p.language, split.as_str(), talk),
                        language: lang.clone(),
                        witness_language: None,
                        label,
                        arg1_text: format!("first argument {k}"),
                        arg2_text: format!("second argument {k}"),
                        arg1_clip: format!("clips/{id}.arg1.wav"),
                        arg2_clip: format!("clips/{id}.arg2.wav"),
                        sentence_index: None,
                        inter_sentential: true,
                        split: *split,
                    });
                    k += 1;
                }
            }
        }
    }
    DatasetManifest::new(out).expect("generated ids are unique")
}
