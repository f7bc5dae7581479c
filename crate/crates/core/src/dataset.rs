//! Manifest I/O, talk-disjoint splits, corpus statistics, evaluation
//! metrics and the comparison against sentence-indexed gold annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LanguageCode, RelationLabel};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ASSIGNABLE: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

/// One released instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub talk_id: String,
    pub language: LanguageCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_language: Option<LanguageCode>,
    pub label: RelationLabel,
    pub arg1_text: String,
    pub arg2_text: String,
    pub arg1_clip: String,
    pub arg2_clip: String,
    /// Sentence of the source talk that hosts Arg2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_index: Option<usize>,
    #[serde(default = "yes")]
    pub inter_sentential: bool,
    #[serde(default)]
    pub split: Split,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub instances: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Sorts by instance id and rejects duplicates.
    pub fn new(mut instances: Vec<ManifestEntry>) -> Result<Self> {
        instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        if let Some(w) = instances.windows(2).find(|w| w[0].instance_id == w[1].instance_id) {
            return Err(Error::Validation(format!("duplicate instance id {}", w[0].instance_id)));
        }
        Ok(DatasetManifest { instances })
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(out)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.instances {
            s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            s.push('\n');
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// sha256 of the JSONL rendering, tagged with the manifest version.
    pub fn provenance_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("manifest-v{MANIFEST_VERSION}\n"));
        h.update(self.to_jsonl());
        hex::encode(h.finalize())
    }

    /// Clip references that do not exist under `root`.
    pub fn missing_clips(&self, root: &Path) -> Vec<String> {
        let mut out: Vec<String> = self
            .instances
            .iter()
            .flat_map(|e| [&e.arg1_clip, &e.arg2_clip])
            .filter(|c| !root.join(c).is_file())
            .cloned()
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn languages(&self) -> BTreeSet<LanguageCode> {
        self.instances.iter().map(|e| e.language.clone()).collect()
    }
}

// ---------------------------------------------------------------- splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// train, validation, test
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            ratios: [train, validation, test],
            seed,
        }
    }

    /// Per-language defaults; other languages get 60/20/20.
    pub fn default_for(language: &str, seed: u64) -> Self {
        match language {
            "fr" => Self::new(0.55, 0.15, 0.30, seed),
            "es" => Self::new(0.25, 0.25, 0.50, seed),
            _ => Self::new(0.6, 0.2, 0.2, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::Validation(format!("split ratios must be non-negative: {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Per-talk class counts, the unit the splitter moves around.
#[derive(Debug, Clone, PartialEq)]
pub struct TalkCounts {
    pub talk_id: String,
    pub per_class: [usize; 4],
}

impl TalkCounts {
    pub fn size(&self) -> usize {
        self.per_class.iter().sum()
    }
}

pub fn talk_counts(entries: &[ManifestEntry]) -> Vec<TalkCounts> {
    let mut m: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for e in entries {
        m.entry(&e.talk_id).or_default()[e.label.index()] += 1;
    }
    m.into_iter()
        .map(|(t, c)| TalkCounts {
            talk_id: t.to_string(),
            per_class: c,
        })
        .collect()
}

/// Deviation measures of an assignment against the target ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCost {
    /// `max_{s,c} |n_{s,c} − r_s·N_c|`
    pub max_cell: f64,
    /// `Σ_s |n_s − r_s·N| + Σ_{s,c} |n_{s,c} − r_s·N_c|`
    pub total: f64,
}

impl SplitCost {
    fn better_than(&self, other: &SplitCost) -> bool {
        const EPS: f64 = 1e-9;
        self.max_cell < other.max_cell - EPS
            || ((self.max_cell - other.max_cell).abs() <= EPS && self.total < other.total - EPS)
    }
}

fn cells(talks: &[TalkCounts], assign: &[usize]) -> [[usize; 4]; 3] {
    let mut n = [[0usize; 4]; 3];
    for (t, &s) in talks.iter().zip(assign) {
        for c in 0..4 {
            n[s][c] += t.per_class[c];
        }
    }
    n
}

fn cost_of(n: &[[usize; 4]; 3], totals: &[usize; 4], ratios: &[f64; 3]) -> SplitCost {
    let big_n: usize = totals.iter().sum();
    let mut total = 0.0;
    let mut max_cell: f64 = 0.0;
    for s in 0..3 {
        let ns: usize = n[s].iter().sum();
        total += (ns as f64 - ratios[s] * big_n as f64).abs();
        for c in 0..4 {
            let d = (n[s][c] as f64 - ratios[s] * totals[c] as f64).abs();
            total += d;
            max_cell = max_cell.max(d);
        }
    }
    SplitCost { max_cell, total }
}

/// Cost of an arbitrary assignment (`assign[i]` indexes train/validation/test).
pub fn assignment_cost(talks: &[TalkCounts], assign: &[usize], ratios: &[f64; 3]) -> SplitCost {
    let mut totals = [0usize; 4];
    for t in talks {
        for c in 0..4 {
            totals[c] += t.per_class[c];
        }
    }
    cost_of(&cells(talks, assign), &totals, ratios)
}

fn feasible(assign: &[usize], ratios: &[f64; 3]) -> bool {
    (0..3).all(|s| ratios[s] == 0.0 || assign.contains(&s)) && assign.iter().all(|&s| ratios[s] > 0.0)
}

/// Assigns each talk to train/validation/test (indices 0/1/2).
///
/// Talks are placed largest first (ties broken by a seeded shuffle), each into
/// the split with the lowest resulting total deviation, then improved by
/// single moves and pairwise swaps, falling back to joint two-talk moves
/// when those stall, until no step lowers the cost.
pub fn assign_talks(talks: &[TalkCounts], spec: &SplitSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let ratios = spec.ratios;
    let positive: Vec<usize> = (0..3).filter(|&s| ratios[s] > 0.0).collect();
    if talks.len() < positive.len() {
        return Err(Error::Validation(format!(
            "{} talks cannot fill {} non-empty splits",
            talks.len(),
            positive.len()
        )));
    }
    let mut totals = [0usize; 4];
    for t in talks {
        for c in 0..4 {
            totals[c] += t.per_class[c];
        }
    }
    let mut order: Vec<usize> = (0..talks.len()).collect();
    order.sort_by(|&a, &b| talks[a].talk_id.cmp(&talks[b].talk_id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    order.sort_by_key(|&i| std::cmp::Reverse(talks[i].size()));

    const NONE: usize = usize::MAX;
    let mut assign = vec![NONE; talks.len()];
    let mut n = [[0usize; 4]; 3];
    let mut used = [0usize; 3];
    for (placed, &i) in order.iter().enumerate() {
        let remaining = talks.len() - placed;
        let empty: Vec<usize> = positive.iter().copied().filter(|&s| used[s] == 0).collect();
        let choices = if remaining <= empty.len() { empty } else { positive.clone() };
        let mut best: Option<(f64, usize)> = None;
        for &s in &choices {
            let mut trial = n;
            for c in 0..4 {
                trial[s][c] += talks[i].per_class[c];
            }
            let score = cost_of(&trial, &totals, &ratios).total;
            if best.is_none_or(|(b, _)| score < b - 1e-9) {
                best = Some((score, s));
            }
        }
        let s = best.expect("at least one positive split").1;
        assign[i] = s;
        used[s] += 1;
        for c in 0..4 {
            n[s][c] += talks[i].per_class[c];
        }
    }

    let (mut best_assign, mut best_cost) = refine(talks, &positive, &ratios, &totals, assign);

    // Local search can stall; restart it from seeded random assignments and
    // keep the best outcome (ties go to the earliest).
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5b11_7000);
    for _ in 0..RESTARTS {
        let mut order: Vec<usize> = (0..talks.len()).collect();
        order.shuffle(&mut rng);
        let mut start = vec![0usize; talks.len()];
        for (k, &i) in order.iter().enumerate() {
            start[i] = if k < positive.len() {
                positive[k]
            } else {
                positive[rng.random_range(0..positive.len())]
            };
        }
        let (a, c) = refine(talks, &positive, &ratios, &totals, start);
        if c.better_than(&best_cost) {
            best_assign = a;
            best_cost = c;
        }
    }
    debug_assert!(feasible(&best_assign, &ratios));
    Ok(best_assign)
}

const RESTARTS: usize = 8;

/// Moves, swaps and joint two-talk moves, steepest descent on
/// (max cell deviation, total deviation).
fn refine(talks: &[TalkCounts], positive: &[usize], ratios: &[f64; 3], totals: &[usize; 4], mut assign: Vec<usize>) -> (Vec<usize>, SplitCost) {
    let mut n = cells(talks, &assign);
    let mut used = [0usize; 3];
    for &s in &assign {
        used[s] += 1;
    }
    let shift = |n: &mut [[usize; 4]; 3], i: usize, from: usize, to: usize| {
        for c in 0..4 {
            n[from][c] -= talks[i].per_class[c];
            n[to][c] += talks[i].per_class[c];
        }
    };
    let mut current = cost_of(&n, totals, ratios);
    for _ in 0..10_000 {
        let mut best: Option<(SplitCost, Vec<(usize, usize)>)> = None;
        for i in 0..talks.len() {
            let from = assign[i];
            if used[from] == 1 {
                continue; // would empty a positive split
            }
            for &to in positive {
                if to == from {
                    continue;
                }
                let mut trial = n;
                shift(&mut trial, i, from, to);
                let c = cost_of(&trial, totals, ratios);
                if c.better_than(&best.as_ref().map_or(current, |b| b.0)) {
                    best = Some((c, vec![(i, to)]));
                }
            }
        }
        for i in 0..talks.len() {
            for j in i + 1..talks.len() {
                let (si, sj) = (assign[i], assign[j]);
                if si == sj {
                    continue;
                }
                let mut trial = n;
                shift(&mut trial, i, si, sj);
                shift(&mut trial, j, sj, si);
                let c = cost_of(&trial, totals, ratios);
                if c.better_than(&best.as_ref().map_or(current, |b| b.0)) {
                    best = Some((c, vec![(i, sj), (j, si)]));
                }
            }
        }
        if best.is_none() {
            // stuck: try relocating two talks at once to any pair of splits
            for i in 0..talks.len() {
                for j in i + 1..talks.len() {
                    let (si, sj) = (assign[i], assign[j]);
                    for &ti in positive {
                        for &tj in positive {
                            if (ti == si && tj == sj) || (ti == sj && tj == si) {
                                continue; // no-op or plain swap, already tried
                            }
                            let mut u = used;
                            u[si] -= 1;
                            u[sj] -= 1;
                            u[ti] += 1;
                            u[tj] += 1;
                            if positive.iter().any(|&s| u[s] == 0) {
                                continue;
                            }
                            let mut trial = n;
                            shift(&mut trial, i, si, ti);
                            shift(&mut trial, j, sj, tj);
                            let c = cost_of(&trial, totals, ratios);
                            if c.better_than(&best.as_ref().map_or(current, |b| b.0)) {
                                best = Some((c, vec![(i, ti), (j, tj)]));
                            }
                        }
                    }
                }
            }
        }
        let Some((c, changes)) = best else { break };
        for (i, to) in changes {
            let from = assign[i];
            shift(&mut n, i, from, to);
            used[from] -= 1;
            used[to] += 1;
            assign[i] = to;
        }
        current = c;
    }
    (assign, current)
}

/// Talk-disjoint split of all entries under one spec.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    let talks = talk_counts(&manifest.instances);
    let assign = assign_talks(&talks, spec)?;
    let by_talk: BTreeMap<&str, Split> = talks
        .iter()
        .zip(&assign)
        .map(|(t, &s)| (t.talk_id.as_str(), Split::ASSIGNABLE[s]))
        .collect();
    let mut out = manifest.clone();
    for e in &mut out.instances {
        e.split = by_talk[e.talk_id.as_str()];
    }
    Ok(out)
}

/// Splits each language separately with its own spec.
pub fn split_by_language(manifest: &DatasetManifest, spec_for: impl Fn(&LanguageCode) -> SplitSpec) -> Result<DatasetManifest> {
    let mut all = Vec::with_capacity(manifest.instances.len());
    for lang in manifest.languages() {
        let part = DatasetManifest {
            instances: manifest.instances.iter().filter(|e| e.language == lang).cloned().collect(),
        };
        all.extend(split(&part, &spec_for(&lang))?.instances);
    }
    DatasetManifest::new(all)
}

// ---------------------------------------------------------------- statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    #[serde(rename = "cause-effect")]
    pub cause_effect: usize,
    pub contrast: usize,
    pub temporal: usize,
    pub elaboration: usize,
}

impl LabelCounts {
    fn add(&mut self, l: RelationLabel) {
        match l {
            RelationLabel::CauseEffect => self.cause_effect += 1,
            RelationLabel::Contrast => self.contrast += 1,
            RelationLabel::Temporal => self.temporal += 1,
            RelationLabel::Elaboration => self.elaboration += 1,
        }
    }

    fn absorb(&mut self, o: &LabelCounts) {
        self.cause_effect += o.cause_effect;
        self.contrast += o.contrast;
        self.temporal += o.temporal;
        self.elaboration += o.elaboration;
    }

    pub fn get(&self, l: RelationLabel) -> usize {
        match l {
            RelationLabel::CauseEffect => self.cause_effect,
            RelationLabel::Contrast => self.contrast,
            RelationLabel::Temporal => self.temporal,
            RelationLabel::Elaboration => self.elaboration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub relations: usize,
    pub talks: usize,
    pub labels: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitTable {
    pub train: SplitStats,
    pub validation: SplitStats,
    pub test: SplitStats,
    pub unassigned: SplitStats,
}

impl SplitTable {
    pub fn get(&self, s: Split) -> &SplitStats {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
            Split::Unassigned => &self.unassigned,
        }
    }

    fn get_mut(&mut self, s: Split) -> &mut SplitStats {
        match s {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
            Split::Unassigned => &mut self.unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub language: LanguageCode,
    pub total: usize,
    pub talks: usize,
    pub labels: LabelCounts,
    pub splits: SplitTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: usize,
    pub labels: LabelCounts,
    pub languages: Vec<LanguageStats>,
}

pub fn stats_report(manifest: &DatasetManifest) -> StatsReport {
    let mut report = StatsReport::default();
    for lang in manifest.languages() {
        let mut ls = LanguageStats {
            language: lang.clone(),
            total: 0,
            talks: 0,
            labels: LabelCounts::default(),
            splits: SplitTable::default(),
        };
        let mut talks: BTreeSet<&str> = BTreeSet::new();
        let mut split_talks: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
        for e in manifest.instances.iter().filter(|e| e.language == lang) {
            ls.total += 1;
            ls.labels.add(e.label);
            talks.insert(&e.talk_id);
            split_talks.entry(e.split).or_default().insert(&e.talk_id);
            let st = ls.splits.get_mut(e.split);
            st.relations += 1;
            st.labels.add(e.label);
        }
        ls.talks = talks.len();
        for (s, t) in split_talks {
            ls.splits.get_mut(s).talks = t.len();
        }
        report.total += ls.total;
        report.labels.absorb(&ls.labels);
        report.languages.push(ls);
    }
    report
}

impl StatsReport {
    /// Pretty JSON with a trailing newline; field order is fixed.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<9} {:<11} {:>9} {:>6} {:>12} {:>9} {:>9} {:>12}",
            "language", "split", "relations", "talks", "cause-effect", "contrast", "temporal", "elaboration"
        );
        for l in &self.languages {
            let rows = [Split::Train, Split::Validation, Split::Test, Split::Unassigned];
            for s in rows {
                let st = l.splits.get(s);
                if s == Split::Unassigned && st.relations == 0 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "{:<9} {:<11} {:>9} {:>6} {:>12} {:>9} {:>9} {:>12}",
                    l.language.as_str(),
                    s.as_str(),
                    st.relations,
                    st.talks,
                    st.labels.cause_effect,
                    st.labels.contrast,
                    st.labels.temporal,
                    st.labels.elaboration
                );
            }
            let _ = writeln!(
                out,
                "{:<9} {:<11} {:>9} {:>6} {:>12} {:>9} {:>9} {:>12}",
                l.language.as_str(),
                "total",
                l.total,
                l.talks,
                l.labels.cause_effect,
                l.labels.contrast,
                l.labels.temporal,
                l.labels.elaboration
            );
        }
        out
    }
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: RelationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// rows: gold, columns: predicted
    pub confusion: [[usize; 4]; 4],
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Label indices follow [`RelationLabel::ALL`]; empty denominators give 0.
pub fn evaluate(predictions: &[usize], gold: &[usize]) -> Result<Metrics> {
    if predictions.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let mut confusion = [[0usize; 4]; 4];
    for (&p, &g) in predictions.iter().zip(gold) {
        if p >= 4 || g >= 4 {
            return Err(Error::Range(format!("label index {} outside the four senses", p.max(g))));
        }
        confusion[g][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = RelationLabel::ALL
        .iter()
        .map(|&l| {
            let c = l.index();
            let tp = confusion[c][c];
            let predicted: usize = (0..4).map(|g| confusion[g][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: l,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let correct: usize = (0..4).map(|c| confusion[c][c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 4.0;
    Ok(Metrics {
        accuracy: ratio(correct, gold.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion,
    })
}

pub fn evaluate_labels(predictions: &[RelationLabel], gold: &[RelationLabel]) -> Result<Metrics> {
    let p: Vec<usize> = predictions.iter().map(|l| l.index()).collect();
    let g: Vec<usize> = gold.iter().map(|l| l.index()).collect();
    evaluate(&p, &g)
}

// ---------------------------------------------------------------- gold comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Inter,
    Intra,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRelation {
    pub talk_id: String,
    pub sentence_index: usize,
    pub label: RelationLabel,
    pub inter_or_intra: Scope,
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldRelation>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub const GOLD_MATCH_CRITERION: &str = "same-talk-same-arg2-sentence/v1";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WitnessBreakdown {
    pub mined_inter: usize,
    pub matching: usize,
    pub new_inter: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelAgreement {
    pub compared: usize,
    pub agreeing: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldComparison {
    pub criterion: String,
    pub gold_total: usize,
    pub mined_inter: usize,
    /// Gold relations hit by at least one mined inter-sentential instance.
    pub matching: usize,
    /// Mined inter-sentential instances with no gold relation at their sentence.
    pub new_inter: usize,
    /// Mined intra-sentential instances; outside the gold's scope.
    pub intra_count: usize,
    pub per_witness_language: BTreeMap<String, WitnessBreakdown>,
    pub label_agreement: LabelAgreement,
}

/// Matching uses talk + Arg2 sentence only; labels are compared on matched
/// pairs and reported, not required.
pub fn compare_to_gold(ours: &DatasetManifest, gold: &[GoldRelation]) -> GoldComparison {
    let key = |t: &str, s: usize| (t.to_string(), s);
    let mut gold_at: BTreeMap<(String, usize), Vec<&GoldRelation>> = BTreeMap::new();
    for g in gold {
        gold_at.entry(key(&g.talk_id, g.sentence_index)).or_default().push(g);
    }
    let mut matched_keys: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut per_witness: BTreeMap<String, (usize, BTreeSet<(String, usize)>, usize)> = BTreeMap::new();
    let (mut mined_inter, mut new_inter, mut intra) = (0, 0, 0);
    let mut agreement = LabelAgreement::default();
    for e in &ours.instances {
        if !e.inter_sentential {
            intra += 1;
            continue;
        }
        mined_inter += 1;
        let w = e.witness_language.as_ref().map_or("unknown", |l| l.as_str()).to_string();
        let slot = per_witness.entry(w).or_default();
        slot.0 += 1;
        let hit = e.sentence_index.and_then(|s| gold_at.get(&key(&e.talk_id, s)).map(|g| (s, g)));
        match hit {
            Some((s, gs)) => {
                matched_keys.insert(key(&e.talk_id, s));
                slot.1.insert(key(&e.talk_id, s));
                for g in gs {
                    agreement.compared += 1;
                    agreement.agreeing += usize::from(g.label == e.label);
                }
            }
            None => {
                new_inter += 1;
                slot.2 += 1;
            }
        }
    }
    let count_gold = |keys: &BTreeSet<(String, usize)>| keys.iter().map(|k| gold_at[k].len()).sum::<usize>();
    GoldComparison {
        criterion: GOLD_MATCH_CRITERION.into(),
        gold_total: gold.len(),
        mined_inter,
        matching: count_gold(&matched_keys),
        new_inter,
        intra_count: intra,
        per_witness_language: per_witness
            .into_iter()
            .map(|(w, (m, keys, n))| {
                (
                    w,
                    WitnessBreakdown {
                        mined_inter: m,
                        matching: count_gold(&keys),
                        new_inter: n,
                    },
                )
            })
            .collect(),
        label_agreement: agreement,
    }
}
