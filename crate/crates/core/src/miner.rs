//! Explicitation mining: pair source and translated subtitle segments by
//! time, find connectives that a translator added, and keep only the ones
//! that survive every filter.
//!
//! A candidate is a time-aligned (source, target) segment pair whose target
//! contains a clause-initial connective from the target lexicon. Filters run
//! in a fixed order and each decision is appended to the candidate's trail:
//!
//! 1. `duration_consistency` — duration ratio and time overlap bounds
//! 2. `source_screen` — no source-lexicon connective anywhere in the source
//! 3. `target_alternatives` — no second target connective
//! 4. the four non-discourse rules (`intensifier`, `quoted_material`,
//!    `final_token`, `filler`)
//! 5. `dedup`, applied across witnesses after all talks are mined

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageCode, Lexicon, RelationLabel, SubtitleSegment};
use crate::error::{Error, Result};
use crate::text::{is_quote, is_sentence_final, tokenize, Token};
use crate::trail::{DropCode, FilterRecord};

/// Bounds for accepting a time-aligned pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Minimum overlap as a fraction of the shorter segment.
    pub min_overlap: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            min_ratio: 0.5,
            max_ratio: 2.0,
            min_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub source_segment: SubtitleSegment,
    pub target_segment: SubtitleSegment,
    pub target_language: LanguageCode,
    /// Target duration over source duration.
    pub duration_ratio: f64,
}

/// A time-matched pair that failed the duration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedPair {
    pub pair: CandidatePair,
    pub overlap_fraction: f64,
    pub record: FilterRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<CandidatePair>,
    pub rejected: Vec<RejectedPair>,
}

fn overlap_ms(a: &SubtitleSegment, b: &SubtitleSegment) -> u64 {
    a.end_ms.min(b.end_ms).saturating_sub(a.start_ms.max(b.start_ms))
}

/// One-to-one matching of source to target segments maximizing total time
/// overlap. Returns index pairs in increasing order.
pub fn max_overlap_matching(source: &[SubtitleSegment], target: &[SubtitleSegment]) -> Vec<(usize, usize)> {
    let (n, m) = (source.len(), target.len());
    let mut best = vec![vec![0u64; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            let ov = overlap_ms(&source[i - 1], &target[j - 1]);
            let diag = if ov > 0 { best[i - 1][j - 1] + ov } else { 0 };
            best[i][j] = diag.max(best[i - 1][j]).max(best[i][j - 1]);
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let ov = overlap_ms(&source[i - 1], &target[j - 1]);
        if ov > 0 && best[i][j] == best[i - 1][j - 1] + ov {
            out.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if best[i][j] == best[i - 1][j] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Pairs segments by maximal overlap and splits the result by the tolerance.
pub fn align_segment_pairs_detailed(
    source: &[SubtitleSegment],
    target: &[SubtitleSegment],
    target_language: &LanguageCode,
    tolerance: &Tolerance,
) -> Alignment {
    let mut out = Alignment::default();
    for (i, j) in max_overlap_matching(source, target) {
        let (s, t) = (&source[i], &target[j]);
        let ratio = t.duration_ms() as f64 / s.duration_ms() as f64;
        let shorter = s.duration_ms().min(t.duration_ms()) as f64;
        let overlap = overlap_ms(s, t) as f64 / shorter;
        let pair = CandidatePair {
            source_segment: s.clone(),
            target_segment: t.clone(),
            target_language: target_language.clone(),
            duration_ratio: ratio,
        };
        let detail = format!("ratio {ratio:.3}, overlap {overlap:.3}");
        if ratio < tolerance.min_ratio || ratio > tolerance.max_ratio || overlap < tolerance.min_overlap {
            tracing::debug!(event = "pair_excluded", talk = %s.talk_id, source = s.index, target = t.index, %detail);
            out.rejected.push(RejectedPair {
                pair,
                overlap_fraction: overlap,
                record: FilterRecord::fail("duration_consistency", detail),
            });
        } else {
            out.pairs.push(pair);
        }
    }
    out
}

pub fn align_segment_pairs(
    source: &[SubtitleSegment],
    target: &[SubtitleSegment],
    target_language: &LanguageCode,
    tolerance: &Tolerance,
) -> Vec<CandidatePair> {
    align_segment_pairs_detailed(source, target, target_language, tolerance).pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// First token of the segment.
    SegmentInitial,
    /// First token after sentence-final punctuation.
    SentenceInitial,
    /// First token after a comma or semicolon, optionally past a coordinating conjunction.
    ClauseInitial,
    /// Anywhere else.
    Medial,
}

/// Where inside a segment a connective sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    /// Byte offsets of the connective in the segment text.
    pub start: usize,
    pub end: usize,
    /// Zero-based sentence count within the segment.
    pub sentence: usize,
    /// Zero-based clause count within that sentence.
    pub clause: usize,
    pub boundary: Boundary,
}

impl Position {
    pub fn is_clause_initial(&self) -> bool {
        self.boundary != Boundary::Medial
    }

    /// Relation between sentences rather than inside one.
    pub fn is_inter_sentential(&self) -> bool {
        matches!(self.boundary, Boundary::SegmentInitial | Boundary::SentenceInitial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveMatch {
    pub surface: String,
    pub sense: RelationLabel,
    /// Token range in the segment's token list.
    pub first_token: usize,
    pub last_token: usize,
    pub position: Position,
}

pub(crate) fn coordinating_conjunctions(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &["and", "or", "nor"],
        "fr" => &["et", "ou", "ni"],
        "es" => &["y", "e", "o", "u", "ni"],
        "de" => &["und", "oder"],
        "it" => &["e", "ed", "o", "né"],
        "ar" => &["و", "أو"],
        _ => &[],
    }
}

fn is_opening(c: char) -> bool {
    is_quote(c) || matches!(c, '(' | '[' | '¿' | '¡' | '-' | '—' | '–')
}

/// Classifies the boundary right before byte `at`, looking past a single
/// coordinating conjunction when it is itself preceded by a comma.
fn boundary_before(text: &str, tokens: &[Token], tok_idx: usize, lang: &str) -> Boundary {
    let prefix = &text[..tokens[tok_idx].start];
    let trimmed = prefix.trim_end_matches(|c: char| c.is_whitespace() || is_opening(c));
    let Some(last) = trimmed.chars().last() else {
        return Boundary::SegmentInitial;
    };
    let closing_stripped = trimmed.trim_end_matches(|c: char| is_quote(c) || c == ')');
    if let Some(c) = closing_stripped.chars().last() {
        if is_sentence_final(c) {
            return Boundary::SentenceInitial;
        }
    }
    if matches!(last, ',' | ';' | '،') {
        return Boundary::ClauseInitial;
    }
    if tok_idx > 0 && coordinating_conjunctions(lang).contains(&tokens[tok_idx - 1].text.as_str()) {
        let before_conj = text[..tokens[tok_idx - 1].start].trim_end();
        if before_conj.ends_with([',', ';', '،']) {
            return Boundary::ClauseInitial;
        }
    }
    Boundary::Medial
}

fn sentence_and_clause(text: &str, at: usize) -> (usize, usize) {
    let prefix = &text[..at];
    let mut sentence = 0;
    let mut clause = 0;
    let chars: Vec<char> = prefix.chars().collect();
    for (k, &c) in chars.iter().enumerate() {
        if is_sentence_final(c) {
            let next = chars.get(k + 1).copied();
            if next.is_none_or(|n| n.is_whitespace() || is_quote(n)) && !is_sentence_final(next.unwrap_or(' ')) {
                sentence += 1;
                clause = 0;
            }
        } else if matches!(c, ',' | ';' | '،') {
            clause += 1;
        }
    }
    (sentence, clause)
}

/// Finds all connective occurrences, scanning left to right and preferring the
/// longest surface at each token. Case-insensitive, whole tokens only.
pub fn find_connectives(text: &str, lexicon: &Lexicon) -> Vec<ConnectiveMatch> {
    let tokens = tokenize(text);
    let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let lang = lexicon.language().as_str();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=lexicon.max_len().min(tokens.len() - i))
            .rev()
            .find_map(|len| lexicon.get_tokens(&words[i..i + len]).map(|e| (len, e)));
        match longest {
            Some((len, entry)) => {
                let (sentence, clause) = sentence_and_clause(text, tokens[i].start);
                out.push(ConnectiveMatch {
                    surface: entry.surface.clone(),
                    sense: entry.sense,
                    first_token: i,
                    last_token: i + len - 1,
                    position: Position {
                        start: tokens[i].start,
                        end: tokens[i + len - 1].end,
                        sentence,
                        clause,
                        boundary: boundary_before(text, &tokens, i, lang),
                    },
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Outcome of screening a pair for an added connective.
#[derive(Debug, Clone, PartialEq)]
pub enum Screening {
    /// The target carries no clause-initial connective.
    NoCandidate,
    /// A candidate connective was found but a screening rule rejected it.
    Rejected {
        hit: ConnectiveMatch,
        code: DropCode,
        trail: Vec<FilterRecord>,
    },
    Hit {
        hit: ConnectiveMatch,
        trail: Vec<FilterRecord>,
    },
}

/// Runs the source and target screens on a duration-consistent pair.
pub fn screen_pair(pair: &CandidatePair, src_lexicon: &Lexicon, tgt_lexicon: &Lexicon) -> Screening {
    let target_matches = find_connectives(&pair.target_segment.text, tgt_lexicon);
    let Some(hit_idx) = target_matches.iter().position(|m| m.position.is_clause_initial()) else {
        return Screening::NoCandidate;
    };
    let hit = target_matches[hit_idx].clone();
    let mut trail = vec![FilterRecord::pass(
        "duration_consistency",
        format!("ratio {:.3}", pair.duration_ratio),
    )];

    let source_matches = find_connectives(&pair.source_segment.text, src_lexicon);
    if let Some(m) = source_matches.first() {
        trail.push(FilterRecord::fail(
            "source_screen",
            format!("source already has {:?}", m.surface),
        ));
        return Screening::Rejected {
            hit,
            code: DropCode::SrcExplicit,
            trail,
        };
    }
    trail.push(FilterRecord::pass("source_screen", "no source connective"));

    if let Some(other) = target_matches.iter().enumerate().find(|(k, _)| *k != hit_idx) {
        trail.push(FilterRecord::fail(
            "target_alternatives",
            format!("target also has {:?}", other.1.surface),
        ));
        return Screening::Rejected {
            hit,
            code: DropCode::TgtAlternative,
            trail,
        };
    }
    trail.push(FilterRecord::pass("target_alternatives", "single target connective"));
    Screening::Hit { hit, trail }
}

/// The explicit connective a translation added, if any.
pub fn detect_explicitation(
    pair: &CandidatePair,
    src_lexicon: &Lexicon,
    tgt_lexicon: &Lexicon,
) -> Option<(String, Position)> {
    match screen_pair(pair, src_lexicon, tgt_lexicon) {
        Screening::Hit { hit, .. } => Some((hit.surface, hit.position)),
        _ => None,
    }
}

const INTENSIFIERS: &[&str] = &["so", "si", "tan", "tanto", "così"];

fn subject_pronouns(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &["i", "you", "he", "she", "it", "we", "they", "there", "this", "that", "the", "a", "an", "my", "our", "people"],
        "fr" => &["je", "j'", "tu", "il", "elle", "on", "nous", "vous", "ils", "elles", "c'est", "ce", "le", "la", "les"],
        "es" => &["yo", "tú", "él", "ella", "nosotros", "nosotras", "ellos", "ellas", "usted", "ustedes", "el", "la", "los", "las"],
        "de" => &["ich", "du", "er", "sie", "es", "wir", "ihr", "man", "der", "die", "das"],
        _ => &[],
    }
}

fn adjectives_adverbs(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &[
            "good", "bad", "big", "small", "much", "many", "tired", "happy", "sad", "great", "long", "far",
            "hard", "easy", "little", "well", "very", "often", "important", "simple", "true", "sure",
            "cool", "nice", "late", "early", "fast", "strong", "weak", "old", "young", "hot", "cold",
            "proud", "sorry", "glad", "excited", "interesting", "amazing", "different", "close",
        ],
        "fr" => &[
            "beau", "belle", "bien", "fatigué", "fatiguée", "grand", "grande", "petit", "petite",
            "important", "importante", "content", "contente", "heureux", "heureuse", "triste", "simple",
            "facile", "difficile", "long", "longue", "vite", "souvent", "tard", "tôt", "fort", "forte",
            "fier", "fière", "loin", "proche",
        ],
        "es" => &[
            "bueno", "buena", "malo", "mala", "grande", "pequeño", "pequeña", "cansado", "cansada",
            "feliz", "bien", "mal", "rápido", "fácil", "difícil", "importante", "tarde", "temprano",
            "lejos", "cerca", "bonito", "bonita", "triste", "largo", "larga", "fuerte", "orgulloso",
        ],
        "de" => &[
            "schön", "müde", "gut", "schlecht", "groß", "klein", "viel", "viele", "wichtig", "einfach",
            "schwer", "schnell", "lang", "lange", "spät", "früh", "glücklich", "traurig", "stark",
            "stolz", "weit", "nah", "alt", "jung", "sehr", "oft",
        ],
        _ => &[],
    }
}

fn looks_like_adjective_or_adverb(word: &str, lang: &str) -> bool {
    if adjectives_adverbs(lang).contains(&word) {
        return true;
    }
    let suffixes: &[&str] = match lang {
        "en" => &["ly", "ful", "ous", "ive", "able", "ible", "less"],
        "fr" => &["ment", "eux", "euse", "ible", "able"],
        "es" => &["mente", "oso", "osa", "ible", "able"],
        "de" => &["lich", "ig", "bar", "sam", "voll"],
        _ => &[],
    };
    word.chars().count() > 4 && suffixes.iter().any(|s| word.ends_with(s))
}

/// Result of the non-discourse rules for one hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseUse {
    pub passed: bool,
    pub code: Option<DropCode>,
    pub reason: Option<&'static str>,
    pub trail: Vec<FilterRecord>,
}

/// Checks the four non-discourse heuristics in order and stops at the first
/// that fires. `text` is the segment the hit was found in.
pub fn apply_discourse_use_filters(hit: &ConnectiveMatch, text: &str, language: &LanguageCode) -> DiscourseUse {
    let lang = language.as_str();
    let tokens = tokenize(text);
    let mut trail = Vec::new();
    let fail = |mut trail: Vec<FilterRecord>, name: &str, code, reason: &'static str, detail: String| {
        trail.push(FilterRecord::fail(name, format!("{reason}: {detail}")));
        DiscourseUse {
            passed: false,
            code: Some(code),
            reason: Some(reason),
            trail,
        }
    };

    // 1. intensifier
    let next = tokens.get(hit.last_token + 1);
    if hit.first_token == hit.last_token && INTENSIFIERS.contains(&hit.surface.as_str()) {
        if let Some(n) = next {
            let adjacent = text[hit.position.end..n.start].trim().is_empty();
            if adjacent
                && !subject_pronouns(lang).contains(&n.text.as_str())
                && looks_like_adjective_or_adverb(&n.text, lang)
            {
                return fail(
                    trail,
                    "intensifier",
                    DropCode::NonDiscourseIntensifier,
                    "intensifier",
                    format!("{:?} before {:?}", hit.surface, n.text),
                );
            }
        }
    }
    trail.push(FilterRecord::pass("intensifier", ""));

    // 2. quotation
    let mut open: Option<usize> = None;
    let mut quoted = false;
    for (b, c) in text.char_indices() {
        let closes = match c {
            '«' | '„' => false,
            '»' | '”' => true,
            '"' | '“' => open.is_some(),
            _ => continue,
        };
        if closes {
            if let Some(s) = open.take() {
                quoted |= s < hit.position.start && hit.position.end <= b;
            }
        } else {
            open = Some(b);
        }
    }
    if quoted {
        return fail(
            trail,
            "quoted_material",
            DropCode::NonDiscourseQuoted,
            "quoted material",
            hit.surface.clone(),
        );
    }
    trail.push(FilterRecord::pass("quoted_material", ""));

    // 3. final token
    if hit.last_token + 1 == tokens.len() {
        return fail(
            trail,
            "final_token",
            DropCode::NonDiscourseFinal,
            "segment-final",
            hit.surface.clone(),
        );
    }
    trail.push(FilterRecord::pass("final_token", ""));

    // 4. turn-initial filler
    if hit.position.boundary == Boundary::SegmentInitial {
        let after = text[hit.position.end..].chars().next();
        if after.is_some_and(|c| c.is_ascii_punctuation() || matches!(c, '…' | '—' | '–')) {
            return fail(
                trail,
                "filler",
                DropCode::NonDiscourseFiller,
                "filler",
                format!("{:?} followed by {:?}", hit.surface, after.unwrap()),
            );
        }
    }
    trail.push(FilterRecord::pass("filler", ""));
    DiscourseUse {
        passed: true,
        code: None,
        reason: None,
        trail,
    }
}

/// Relation label of a connective according to the target lexicon.
pub fn map_relation(connective: &str, tgt_lexicon: &Lexicon) -> Result<RelationLabel> {
    tgt_lexicon
        .get(connective)
        .map(|e| e.sense)
        .ok_or_else(|| Error::Lookup(connective.to_string()))
}

/// A mined implicit relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitInstance {
    pub instance_id: String,
    pub talk_id: String,
    pub source_language: LanguageCode,
    pub explicit_connective: String,
    pub witness_language: LanguageCode,
    /// Other translations that explicitated the same relation with the same label.
    #[serde(default)]
    pub other_witnesses: Vec<LanguageCode>,
    pub label: RelationLabel,
    pub source_segment_index: usize,
    /// Previous, current and next source segment indices.
    pub context_segment_indices: [Option<usize>; 3],
    pub source_text: String,
    pub target_text: String,
    /// Where the connective sat in the target segment.
    pub position: Position,
    pub filter_trail: Vec<FilterRecord>,
}

impl ImplicitInstance {
    pub fn make_id(talk_id: &str, source_language: &LanguageCode, segment: usize, label: RelationLabel) -> String {
        format!("{talk_id}-{source_language}-{segment:05}-{label}")
    }

    fn key(&self) -> (String, usize, RelationLabel) {
        (self.talk_id.clone(), self.source_segment_index, self.label)
    }
}

/// Collapses instances sharing (talk, source segment, label). The surviving
/// witness is the lexicographically first language; the others are kept in
/// `other_witnesses`. Output is sorted by that key.
pub fn dedup(instances: Vec<ImplicitInstance>) -> Vec<ImplicitInstance> {
    dedup_with_report(instances).0
}

/// As [`dedup`], also returning the removed duplicates with a failed `dedup` record.
pub fn dedup_with_report(instances: Vec<ImplicitInstance>) -> (Vec<ImplicitInstance>, Vec<ImplicitInstance>) {
    let mut groups: BTreeMap<(String, usize, RelationLabel), Vec<ImplicitInstance>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.key()).or_default().push(inst);
    }
    // Labels observed per source segment, used to flag disagreements.
    let mut labels_by_segment: BTreeMap<(String, usize), Vec<(RelationLabel, LanguageCode)>> = BTreeMap::new();
    for ((talk, seg, label), group) in &groups {
        let entry = labels_by_segment.entry((talk.clone(), *seg)).or_default();
        for g in group {
            entry.push((*label, g.witness_language.clone()));
            entry.extend(g.other_witnesses.iter().map(|w| (*label, w.clone())));
        }
    }
    for v in labels_by_segment.values_mut() {
        v.sort();
        v.dedup();
    }

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for ((talk, seg, label), mut group) in groups {
        group.sort_by(|a, b| {
            a.witness_language
                .cmp(&b.witness_language)
                .then_with(|| a.explicit_connective.cmp(&b.explicit_connective))
        });
        let mut others: Vec<LanguageCode> = group
            .iter()
            .flat_map(|g| std::iter::once(g.witness_language.clone()).chain(g.other_witnesses.iter().cloned()))
            .collect();
        let mut keep = group.remove(0);
        others.sort();
        others.dedup();
        others.retain(|l| *l != keep.witness_language);

        keep.filter_trail.retain(|r| r.filter != "dedup" && r.filter != "label_agreement");
        keep.filter_trail.push(FilterRecord::pass(
            "dedup",
            if others.is_empty() {
                "unique".to_string()
            } else {
                format!(
                    "kept {}, merged {}",
                    keep.witness_language,
                    others.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(",")
                )
            },
        ));
        let disagreeing: Vec<String> = labels_by_segment[&(talk.clone(), seg)]
            .iter()
            .filter(|(l, _)| *l != label)
            .map(|(l, w)| format!("{l} via {w}"))
            .collect();
        if !disagreeing.is_empty() {
            keep.filter_trail.push(FilterRecord::pass(
                "label_agreement",
                format!("review: other witnesses say {}", disagreeing.join(", ")),
            ));
        }
        keep.other_witnesses = others;
        for mut dup in group {
            dup.filter_trail.push(FilterRecord::fail(
                "dedup",
                format!("duplicate of {} via {}", keep.instance_id, keep.witness_language),
            ));
            removed.push(dup);
        }
        kept.push(keep);
    }
    (kept, removed)
}

/// One line of the mining audit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningRecord {
    pub talk_id: String,
    pub source_language: LanguageCode,
    pub target_language: LanguageCode,
    pub source_index: usize,
    pub target_index: usize,
    pub connective: String,
    pub label: Option<RelationLabel>,
    pub emitted: bool,
    pub drop_code: Option<DropCode>,
    pub trail: Vec<FilterRecord>,
}

/// Subtitles of one talk: source segments plus each available translation.
#[derive(Debug, Clone)]
pub struct TalkSubtitles {
    pub talk_id: String,
    pub source_language: LanguageCode,
    pub source: Vec<SubtitleSegment>,
    pub translations: BTreeMap<LanguageCode, Vec<SubtitleSegment>>,
}

#[derive(Debug, Clone, Default)]
pub struct MiningOutput {
    pub instances: Vec<ImplicitInstance>,
    pub report: Vec<MiningRecord>,
}

impl MiningOutput {
    pub fn candidates(&self) -> usize {
        self.report.len()
    }

    pub fn dropped_by(&self) -> BTreeMap<DropCode, usize> {
        let mut m = BTreeMap::new();
        for r in &self.report {
            if let Some(c) = r.drop_code {
                *m.entry(c).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Mines one talk against every translation that has a lexicon. No dedup.
pub fn mine_talk(
    talk: &TalkSubtitles,
    lexicons: &BTreeMap<LanguageCode, Lexicon>,
    tolerance: &Tolerance,
    targets: &[LanguageCode],
) -> Result<MiningOutput> {
    let src_lex = lexicons
        .get(&talk.source_language)
        .ok_or_else(|| Error::Validation(format!("no lexicon for source language {}", talk.source_language)))?;
    let mut out = MiningOutput::default();
    for (lang, target) in &talk.translations {
        if !targets.contains(lang) {
            continue;
        }
        let Some(tgt_lex) = lexicons.get(lang) else { continue };
        let alignment = align_segment_pairs_detailed(&talk.source, target, lang, tolerance);

        let record = |pair: &CandidatePair, m: &ConnectiveMatch, label, emitted, code, trail| MiningRecord {
            talk_id: talk.talk_id.clone(),
            source_language: talk.source_language.clone(),
            target_language: lang.clone(),
            source_index: pair.source_segment.index,
            target_index: pair.target_segment.index,
            connective: m.surface.clone(),
            label,
            emitted,
            drop_code: code,
            trail,
        };

        for rej in &alignment.rejected {
            let matches = find_connectives(&rej.pair.target_segment.text, tgt_lex);
            if let Some(m) = matches.iter().find(|m| m.position.is_clause_initial()) {
                out.report.push(record(
                    &rej.pair,
                    m,
                    Some(m.sense),
                    false,
                    Some(DropCode::DurRatio),
                    vec![rej.record.clone()],
                ));
            }
        }

        let src_pos: BTreeMap<usize, usize> =
            talk.source.iter().enumerate().map(|(k, s)| (s.index, k)).collect();
        for pair in &alignment.pairs {
            let (hit, mut trail) = match screen_pair(pair, src_lex, tgt_lex) {
                Screening::NoCandidate => continue,
                Screening::Rejected { hit, code, trail } => {
                    out.report.push(record(pair, &hit, Some(hit.sense), false, Some(code), trail));
                    continue;
                }
                Screening::Hit { hit, trail } => (hit, trail),
            };
            let use_check = apply_discourse_use_filters(&hit, &pair.target_segment.text, lang);
            trail.extend(use_check.trail);
            if !use_check.passed {
                out.report.push(record(pair, &hit, Some(hit.sense), false, use_check.code, trail));
                continue;
            }
            let label = map_relation(&hit.surface, tgt_lex)?;
            let k = src_pos[&pair.source_segment.index];
            let neighbor = |d: isize| {
                let idx = k as isize + d;
                (idx >= 0 && (idx as usize) < talk.source.len()).then(|| talk.source[idx as usize].index)
            };
            out.report.push(record(pair, &hit, Some(label), true, None, trail.clone()));
            out.instances.push(ImplicitInstance {
                instance_id: ImplicitInstance::make_id(
                    &talk.talk_id,
                    &talk.source_language,
                    pair.source_segment.index,
                    label,
                ),
                talk_id: talk.talk_id.clone(),
                source_language: talk.source_language.clone(),
                explicit_connective: hit.surface.clone(),
                witness_language: lang.clone(),
                other_witnesses: Vec::new(),
                label,
                source_segment_index: pair.source_segment.index,
                context_segment_indices: [neighbor(-1), Some(pair.source_segment.index), neighbor(1)],
                source_text: pair.source_segment.text.clone(),
                target_text: pair.target_segment.text.clone(),
                position: hit.position,
                filter_trail: trail,
            });
        }
    }
    Ok(out)
}

/// Mines every talk in parallel, merges deterministically and deduplicates.
/// Duplicates show up in the report with a `DUP` drop code.
pub fn mine_corpus(
    talks: &[TalkSubtitles],
    lexicons: &BTreeMap<LanguageCode, Lexicon>,
    tolerance: &Tolerance,
    targets_for: impl Fn(&LanguageCode) -> Vec<LanguageCode> + Sync,
) -> Result<MiningOutput> {
    let per_talk: Vec<MiningOutput> = talks
        .par_iter()
        .map(|t| mine_talk(t, lexicons, tolerance, &targets_for(&t.source_language)))
        .collect::<Result<_>>()?;
    let mut instances = Vec::new();
    let mut report = Vec::new();
    for o in per_talk {
        instances.extend(o.instances);
        report.extend(o.report);
    }
    let (kept, removed) = dedup_with_report(instances);
    for dup in &removed {
        let rec = report.iter_mut().find(|r| {
            r.emitted
                && r.talk_id == dup.talk_id
                && r.source_index == dup.source_segment_index
                && r.target_language == dup.witness_language
                && r.label == Some(dup.label)
        });
        if let Some(r) = rec {
            r.emitted = false;
            r.drop_code = Some(DropCode::Dup);
            r.trail = dup.filter_trail.clone();
        }
    }
    for k in &kept {
        if let Some(r) = report.iter_mut().find(|r| {
            r.emitted
                && r.talk_id == k.talk_id
                && r.source_index == k.source_segment_index
                && r.target_language == k.witness_language
                && r.label == Some(k.label)
        }) {
            r.trail = k.filter_trail.clone();
        }
    }
    report.sort_by(|a, b| {
        (&a.talk_id, &a.source_language, a.source_index, &a.target_language, a.target_index).cmp(&(
            &b.talk_id,
            &b.source_language,
            b.source_index,
            &b.target_language,
            b.target_index,
        ))
    });
    Ok(MiningOutput {
        instances: kept,
        report,
    })
}
