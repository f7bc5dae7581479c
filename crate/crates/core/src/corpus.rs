//! Typed records for talks, timed subtitle segments and connective lexicons,
//! plus the parsers that produce them.
//!
//! Subtitle times are held as integer milliseconds so duration comparisons
//! never accumulate float error. Two subtitle encodings are accepted: SRT and
//! a JSON array of `{index, start_ms, end_ms, text}` objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_space, tokenize};

/// Lowercase ISO-639-style language code (`en`, `fr`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: &str) -> Self {
        LanguageCode(code.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LanguageCode {
    fn from(s: &str) -> Self {
        LanguageCode::new(s)
    }
}

/// The four relation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationLabel {
    CauseEffect,
    Contrast,
    Temporal,
    Elaboration,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 4] = [
        RelationLabel::CauseEffect,
        RelationLabel::Contrast,
        RelationLabel::Temporal,
        RelationLabel::Elaboration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::CauseEffect => "cause-effect",
            RelationLabel::Contrast => "contrast",
            RelationLabel::Temporal => "temporal",
            RelationLabel::Elaboration => "elaboration",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "cause-effect" => Ok(RelationLabel::CauseEffect),
            "contrast" => Ok(RelationLabel::Contrast),
            "temporal" => Ok(RelationLabel::Temporal),
            "elaboration" => Ok(RelationLabel::Elaboration),
            other => Err(format!("unknown sense {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Talk {
    pub talk_id: String,
    pub source_language: LanguageCode,
    pub translations: BTreeSet<LanguageCode>,
    pub audio_path: String,
}

/// Parses a JSONL talk registry and checks its invariants.
pub fn parse_talk_registry(bytes: &[u8]) -> Result<Vec<Talk>> {
    let text = utf8(bytes)?;
    let mut talks = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let talk: Talk = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(talk.talk_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate talk_id {:?} at line {}",
                talk.talk_id,
                n + 1
            )));
        }
        if talk.translations.contains(&talk.source_language) {
            return Err(Error::Validation(format!(
                "talk {:?} lists its source language among its translations",
                talk.talk_id
            )));
        }
        talks.push(talk);
    }
    Ok(talks)
}

/// One timed transcript unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleSegment {
    pub talk_id: String,
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl SubtitleSegment {
    pub fn start(&self) -> f64 {
        self.start_ms as f64 / 1000.0
    }

    pub fn end(&self) -> f64 {
        self.end_ms as f64 / 1000.0
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubtitleFormat {
    Srt,
    SegmentsJson,
}

impl SubtitleFormat {
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext {
            "srt" => Some(SubtitleFormat::Srt),
            "json" => Some(SubtitleFormat::SegmentsJson),
            _ => None,
        }
    }
}

fn utf8(bytes: &[u8]) -> Result<&str> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Validation(format!("input is not valid UTF-8: {e}")))?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

/// Parses a subtitle file for `talk_id`. Segments come back ordered by index;
/// SRT blocks are renumbered from zero in file order.
pub fn parse_subtitles(
    talk_id: &str,
    bytes: &[u8],
    format: SubtitleFormat,
) -> Result<Vec<SubtitleSegment>> {
    let text = utf8(bytes)?;
    match format {
        SubtitleFormat::Srt => parse_srt(talk_id, text),
        SubtitleFormat::SegmentsJson => parse_segments_json(talk_id, text),
    }
}

fn parse_timestamp(s: &str, line: usize) -> Result<u64> {
    let err = || Error::Parse {
        line,
        message: format!("malformed timestamp {s:?}"),
    };
    let (hms, ms) = s.trim().split_once([',', '.']).ok_or_else(err)?;
    let parts: Vec<&str> = hms.split(':').collect();
    if parts.len() != 3 || ms.len() != 3 {
        return Err(err());
    }
    let num = |p: &str| -> Result<u64> {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        p.parse().map_err(|_| err())
    };
    let (h, m, sec, milli) = (num(parts[0])?, num(parts[1])?, num(parts[2])?, num(ms)?);
    if m >= 60 || sec >= 60 {
        return Err(err());
    }
    Ok(((h * 60 + m) * 60 + sec) * 1000 + milli)
}

fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, milli) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02},{milli:03}")
}

fn check_segment(seg: &SubtitleSegment, line: usize) -> Result<()> {
    if seg.end_ms <= seg.start_ms {
        return Err(Error::Validation(format!(
            "line {line}: segment end {} is not after start {}",
            format_timestamp(seg.end_ms),
            format_timestamp(seg.start_ms)
        )));
    }
    if seg.text.trim().is_empty() {
        return Err(Error::Validation(format!("line {line}: empty subtitle text")));
    }
    Ok(())
}

fn parse_srt(talk_id: &str, text: &str) -> Result<Vec<SubtitleSegment>> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let block_line = i + 1;
        // Counter line is optional in the wild; accept blocks that open on the timing line.
        if !lines[i].contains("-->") {
            if !lines[i].trim().bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::Parse {
                    line: block_line,
                    message: format!("expected block counter, found {:?}", lines[i]),
                });
            }
            i += 1;
        }
        let timing_line = i + 1;
        let timing = lines.get(i).copied().unwrap_or("");
        let (a, b) = timing.split_once("-->").ok_or_else(|| Error::Parse {
            line: timing_line,
            message: format!("expected timing line, found {timing:?}"),
        })?;
        let start_ms = parse_timestamp(a, timing_line)?;
        // Some writers append positioning hints after the end time.
        let end_field = b.split_whitespace().next().unwrap_or("");
        let end_ms = parse_timestamp(end_field, timing_line)?;
        i += 1;
        let mut body = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            body.push(lines[i].trim());
            i += 1;
        }
        let seg = SubtitleSegment {
            talk_id: talk_id.to_string(),
            index: out.len(),
            start_ms,
            end_ms,
            text: normalize_space(&body.join(" ")),
        };
        check_segment(&seg, timing_line)?;
        out.push(seg);
    }
    Ok(out)
}

#[derive(Deserialize, Serialize)]
struct JsonSegment {
    index: usize,
    start_ms: u64,
    end_ms: u64,
    text: String,
}

fn parse_segments_json(talk_id: &str, text: &str) -> Result<Vec<SubtitleSegment>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<JsonSegment> = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut out: Vec<SubtitleSegment> = raw
        .into_iter()
        .map(|r| SubtitleSegment {
            talk_id: talk_id.to_string(),
            index: r.index,
            start_ms: r.start_ms,
            end_ms: r.end_ms,
            text: normalize_space(&r.text),
        })
        .collect();
    out.sort_by_key(|s| s.index);
    for (k, seg) in out.iter().enumerate() {
        check_segment(seg, k + 1)?;
        if k > 0 && out[k - 1].index == seg.index {
            return Err(Error::Validation(format!("duplicate segment index {}", seg.index)));
        }
    }
    Ok(out)
}

/// Writes segments back out as SRT, numbering blocks from 1.
pub fn write_srt(segments: &[SubtitleSegment]) -> String {
    let mut s = String::new();
    for (k, seg) in segments.iter().enumerate() {
        s.push_str(&format!(
            "{}\n{} --> {}\n{}\n\n",
            k + 1,
            format_timestamp(seg.start_ms),
            format_timestamp(seg.end_ms),
            seg.text
        ));
    }
    s
}

pub fn write_segments_json(segments: &[SubtitleSegment]) -> String {
    let raw: Vec<JsonSegment> = segments
        .iter()
        .map(|s| JsonSegment {
            index: s.index,
            start_ms: s.start_ms,
            end_ms: s.end_ms,
            text: s.text.clone(),
        })
        .collect();
    serde_json::to_string(&raw).expect("segments serialize")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectiveEntry {
    pub surface: String,
    pub language: LanguageCode,
    pub sense: RelationLabel,
    pub ambiguous: bool,
}

impl ConnectiveEntry {
    /// The surface as a token sequence, as used by the matcher.
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.surface).into_iter().map(|t| t.text).collect()
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn split_columns(line: &str) -> Vec<String> {
    if line.contains('\t') {
        line.split('\t').map(|c| c.trim().to_string()).collect()
    } else {
        // Space-aligned rows: columns are separated by two or more spaces.
        line.split("  ")
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(str::to_string)
            .collect()
    }
}

/// Reads a `surface \t sense \t ambiguous` lexicon. Ambiguous rows are dropped.
pub fn load_lexicon(bytes: &[u8], language: &LanguageCode) -> Result<Vec<ConnectiveEntry>> {
    let text = utf8(bytes)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let row = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols = split_columns(line);
        if cols.len() != 3 {
            return Err(Error::Lexicon {
                row,
                message: format!("expected 3 columns, found {} in {line:?}", cols.len()),
            });
        }
        if row == 1 && cols[0].eq_ignore_ascii_case("surface") {
            continue;
        }
        let sense: RelationLabel = cols[1].parse().map_err(|m| Error::Lexicon {
            row,
            message: format!("{m} in {line:?}"),
        })?;
        let ambiguous = parse_flag(&cols[2]).ok_or_else(|| Error::Lexicon {
            row,
            message: format!("bad ambiguous flag {:?}", cols[2]),
        })?;
        let surface = normalize_space(&cols[0].to_lowercase());
        if surface.is_empty() {
            return Err(Error::Lexicon {
                row,
                message: "empty surface".into(),
            });
        }
        if !ambiguous {
            out.push(ConnectiveEntry {
                surface,
                language: language.clone(),
                sense,
                ambiguous,
            });
        }
    }
    Ok(out)
}

/// An unambiguous connective list for one language, indexed by token sequence.
#[derive(Debug, Clone)]
pub struct Lexicon {
    language: LanguageCode,
    entries: Vec<ConnectiveEntry>,
    by_tokens: BTreeMap<Vec<String>, usize>,
    max_len: usize,
}

impl Lexicon {
    /// Builds a lexicon. A surface listed twice with different senses is
    /// ambiguous and is left out of the index.
    pub fn new(language: LanguageCode, entries: Vec<ConnectiveEntry>) -> Self {
        let mut by_tokens: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut conflicted = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            let toks = e.tokens();
            if toks.is_empty() {
                continue;
            }
            match by_tokens.get(&toks) {
                Some(&j) if entries[j].sense != e.sense => {
                    conflicted.insert(toks);
                }
                Some(_) => {}
                None => {
                    by_tokens.insert(toks, i);
                }
            }
        }
        for toks in &conflicted {
            by_tokens.remove(toks);
        }
        let max_len = by_tokens.keys().map(Vec::len).max().unwrap_or(0);
        Lexicon {
            language,
            entries,
            by_tokens,
            max_len,
        }
    }

    pub fn from_tsv(bytes: &[u8], language: &LanguageCode) -> Result<Self> {
        Ok(Self::new(language.clone(), load_lexicon(bytes, language)?))
    }

    pub fn language(&self) -> &LanguageCode {
        &self.language
    }

    pub fn entries(&self) -> &[ConnectiveEntry] {
        &self.entries
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn get_tokens(&self, toks: &[String]) -> Option<&ConnectiveEntry> {
        self.by_tokens.get(toks).map(|&i| &self.entries[i])
    }

    pub fn get(&self, surface: &str) -> Option<&ConnectiveEntry> {
        let toks: Vec<String> = tokenize(surface).into_iter().map(|t| t.text).collect();
        self.get_tokens(&toks)
    }
}
