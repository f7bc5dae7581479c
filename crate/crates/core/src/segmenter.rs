//! Three-sentence context windows and Arg1/Arg2 span extraction.
//!
//! The span extractor sits behind [`SegmenterPort`] so that an LLM service, a
//! subprocess, or a replay fixture can answer. Whatever comes back is mapped
//! to character spans and validated; if that fails, a deterministic clause
//! heuristic takes over.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LanguageCode, SubtitleSegment};
use crate::error::{Error, Result};
use crate::miner::{coordinating_conjunctions, Boundary, Position};
use crate::text::{char_offset, char_slice, is_quote, is_sentence_final, normalize_space, tokenize};
use crate::trail::FilterRecord;

pub const REL_OPEN: &str = "[[REL]]";
pub const REL_CLOSE: &str = "[[/REL]]";

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "sra", "dra", "vs", "etc", "e.g", "i.e", "no",
    "mt", "mme", "mlle", "m", "hr", "z.b", "bzw", "ca", "approx", "fig", "dept",
];

/// Sentence byte ranges. Boundaries are terminal punctuation followed by
/// whitespace and an uppercase letter (or the end of the text). A period after
/// a known abbreviation or a single capital initial does not end a sentence.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut k = 0;
    while k < chars.len() {
        let (b, c) = chars[k];
        if !is_sentence_final(c) {
            k += 1;
            continue;
        }
        // swallow runs like "?!" or "..." and closing quotes/brackets
        let mut e = k + 1;
        while e < chars.len() && (is_sentence_final(chars[e].1) || is_quote(chars[e].1) || chars[e].1 == ')') {
            e += 1;
        }
        let end_byte = chars.get(e).map(|x| x.0).unwrap_or(text.len());
        let at_end = text[end_byte..].trim().is_empty();
        let next_upper = {
            let mut n = e;
            let mut saw_space = false;
            while n < chars.len() && chars[n].1.is_whitespace() {
                n += 1;
                saw_space = true;
            }
            while n < chars.len() && (is_quote(chars[n].1) || matches!(chars[n].1, '¿' | '¡' | '(')) {
                n += 1;
            }
            saw_space && n < chars.len() && (chars[n].1.is_uppercase() || chars[n].1.is_numeric())
        };
        let guarded = c == '.' && {
            let word: String = text[start..b]
                .rsplit(|ch: char| ch.is_whitespace())
                .next()
                .unwrap_or("")
                .trim_start_matches(|ch: char| !ch.is_alphanumeric())
                .to_lowercase();
            ABBREVIATIONS.contains(&word.as_str())
                || (word.chars().count() == 1 && word.chars().all(char::is_alphabetic))
        };
        if (at_end || next_upper) && !guarded {
            if !text[start..end_byte].trim().is_empty() {
                out.push((start, end_byte));
            }
            start = end_byte;
            if at_end {
                break;
            }
        }
        k = e;
    }
    if !text[start..].trim().is_empty() {
        out.push((start, text.len()));
    }
    // trim leading whitespace out of each range
    out.into_iter()
        .map(|(s, e)| {
            let lead = text[s..e].len() - text[s..e].trim_start().len();
            let trail = text[s..e].len() - text[s..e].trim_end().len();
            (s + lead, e - trail)
        })
        .collect()
}

/// Where in the source segment the relation sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnchor {
    pub segment_index: usize,
    pub sentence: usize,
    pub clause: usize,
    pub boundary: Boundary,
}

impl RelationAnchor {
    pub fn segment_start(segment_index: usize) -> Self {
        RelationAnchor {
            segment_index,
            sentence: 0,
            clause: 0,
            boundary: Boundary::SegmentInitial,
        }
    }

    pub fn from_position(segment_index: usize, p: &Position) -> Self {
        RelationAnchor {
            segment_index,
            sentence: p.sentence,
            clause: p.clause,
            boundary: p.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextOrigin {
    pub talk_id: String,
    /// Source segments overlapping the current sentence.
    pub segment_indices: Vec<usize>,
    /// Index of the current sentence in the talk.
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub prev: String,
    pub current: String,
    pub next: String,
    pub marked_text: String,
    pub origin: ContextOrigin,
    pub language: LanguageCode,
    /// Char offset inside `current` where the second argument starts.
    pub relation_offset: usize,
}

impl ContextWindow {
    /// Unmarked context: the non-empty sentences joined by single spaces.
    pub fn text(&self) -> String {
        [&self.prev, &self.current, &self.next]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Char offset of `current` within [`ContextWindow::text`].
    pub fn current_offset(&self) -> usize {
        if self.prev.is_empty() {
            0
        } else {
            self.prev.chars().count() + 1
        }
    }

    pub fn is_inter_sentential(&self) -> bool {
        self.relation_offset == 0
    }
}

fn mark(prev: &str, current: &str, next: &str) -> String {
    let mut parts = Vec::new();
    if !prev.is_empty() {
        parts.push(prev.to_string());
    }
    parts.push(format!("{REL_OPEN}{current}{REL_CLOSE}"));
    if !next.is_empty() {
        parts.push(next.to_string());
    }
    parts.join(" ")
}

/// Removes the relation markers.
pub fn strip_markers(marked: &str) -> String {
    marked.replace(REL_OPEN, "").replace(REL_CLOSE, "")
}

fn clause_starts(sentence: &str, lang: &str) -> Vec<usize> {
    // byte offsets (relative to sentence) where a new clause begins, excluding 0
    let conj = coordinating_conjunctions(lang);
    let mut out = Vec::new();
    for tok in tokenize(sentence) {
        if tok.start == 0 {
            continue;
        }
        let before = sentence[..tok.start].trim_end();
        let punct = before.chars().last().is_some_and(|c| matches!(c, ',' | ';' | '—' | '–' | '-' | '،'))
            && !sentence[..tok.start].ends_with(|c: char| c.is_alphanumeric());
        if punct && !conj.contains(&tok.text.as_str()) {
            out.push(tok.start);
        } else if conj.contains(&tok.text.as_str()) {
            // clause begins after the conjunction
            let after = sentence[tok.end..].len() - sentence[tok.end..].trim_start().len();
            if tok.end + after < sentence.len() {
                out.push(tok.end + after);
            }
        }
    }
    out.dedup();
    out
}

/// Builds the context around the start of segment `hit_index` (an index into
/// `segments`).
pub fn build_context(segments: &[SubtitleSegment], hit_index: usize, language: &LanguageCode) -> ContextWindow {
    let anchor = RelationAnchor::segment_start(segments[hit_index].index);
    build_context_at(segments, &anchor, language).expect("hit index is valid")
}

/// Builds the prev/current/next window for a relation located by `anchor`.
pub fn build_context_at(
    segments: &[SubtitleSegment],
    anchor: &RelationAnchor,
    language: &LanguageCode,
) -> Result<ContextWindow> {
    let k = segments
        .iter()
        .position(|s| s.index == anchor.segment_index)
        .ok_or_else(|| Error::Contract(format!("segment {} not in talk", anchor.segment_index)))?;
    let mut text = String::new();
    let mut spans = Vec::with_capacity(segments.len());
    for s in segments {
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(&normalize_space(&s.text));
        spans.push((start, text.len()));
    }
    let sentences = split_sentences(&text);
    let (seg_start, seg_end) = spans[k];

    // position of the relation in the talk text
    let starts_in_segment: Vec<usize> = sentences
        .iter()
        .map(|s| s.0)
        .filter(|&s| s > seg_start && s < seg_end)
        .collect();
    let mut pos = if anchor.sentence == 0 {
        seg_start
    } else {
        starts_in_segment
            .get(anchor.sentence - 1)
            .or(starts_in_segment.last())
            .copied()
            .unwrap_or(seg_start)
    };
    let sent_of = |p: usize| sentences.iter().position(|&(s, e)| p >= s && p < e.max(s + 1));
    let mut si = sent_of(pos).unwrap_or(0);
    if anchor.boundary == Boundary::ClauseInitial && anchor.clause > 0 {
        let (s, e) = sentences[si];
        let starts: Vec<usize> = clause_starts(&text[s..e], language.as_str())
            .into_iter()
            .map(|c| c + s)
            .filter(|&c| c > pos && c < seg_end.max(pos + 1))
            .collect();
        if let Some(&c) = starts.get(anchor.clause - 1).or(starts.last()) {
            pos = c;
            si = sent_of(pos).unwrap_or(si);
        }
    }
    let (cs, ce) = sentences[si];
    let current = text[cs..ce].to_string();
    let prev = si.checked_sub(1).map(|p| text[sentences[p].0..sentences[p].1].to_string()).unwrap_or_default();
    let next = sentences.get(si + 1).map(|&(s, e)| text[s..e].to_string()).unwrap_or_default();
    let relation_offset = char_offset(&current, pos.clamp(cs, ce) - cs);
    let segment_indices = spans
        .iter()
        .zip(segments)
        .filter(|((s, e), _)| *s < ce && *e > cs)
        .map(|(_, seg)| seg.index)
        .collect();
    Ok(ContextWindow {
        marked_text: mark(&prev, &current, &next),
        prev,
        current,
        next,
        origin: ContextOrigin {
            talk_id: segments[k].talk_id.clone(),
            segment_indices,
            sentence_index: si,
        },
        language: language.clone(),
        relation_offset,
    })
}

/// Arg1/Arg2 as char ranges into [`ContextWindow::text`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpans {
    pub arg1: (usize, usize),
    pub arg2: (usize, usize),
    pub source: SpanSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanSource {
    External,
    Fallback,
}

impl ArgSpans {
    pub fn arg1_text<'a>(&self, ctx_text: &'a str) -> &'a str {
        char_slice(ctx_text, self.arg1.0, self.arg1.1)
    }

    pub fn arg2_text<'a>(&self, ctx_text: &'a str) -> &'a str {
        char_slice(ctx_text, self.arg2.0, self.arg2.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanIssue {
    Empty,
    OutOfBounds,
    Overlap,
    Order,
    NotSubstring,
}

impl SpanIssue {
    pub fn as_str(self) -> &'static str {
        match self {
            SpanIssue::Empty => "empty",
            SpanIssue::OutOfBounds => "out of bounds",
            SpanIssue::Overlap => "overlap",
            SpanIssue::Order => "order",
            SpanIssue::NotSubstring => "not a substring",
        }
    }
}

/// Checks the span invariants against the context.
pub fn validate_spans(spans: &ArgSpans, ctx: &ContextWindow) -> std::result::Result<(), SpanIssue> {
    let len = ctx.text().chars().count();
    let (a, b) = (spans.arg1, spans.arg2);
    if a.0 >= a.1 || b.0 >= b.1 {
        return Err(SpanIssue::Empty);
    }
    if a.1 > len || b.1 > len {
        return Err(SpanIssue::OutOfBounds);
    }
    if a.0 < b.1 && b.0 < a.1 {
        return Err(SpanIssue::Overlap);
    }
    if a.1 > b.0 {
        return Err(SpanIssue::Order);
    }
    Ok(())
}

/// Wire request for an external segmenter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub context: String,
    pub open_marker: String,
    pub close_marker: String,
    pub few_shot: bool,
}

impl SegmentRequest {
    pub fn for_context(ctx: &ContextWindow, few_shot: bool) -> Self {
        SegmentRequest {
            context: ctx.marked_text.clone(),
            open_marker: REL_OPEN.into(),
            close_marker: REL_CLOSE.into(),
            few_shot,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding; the fixture key.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub arg1_text: String,
    pub arg2_text: String,
}

/// Anything that can answer a segmentation request.
pub trait SegmenterPort: Send + Sync {
    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse>;
}

impl<F> SegmenterPort for F
where
    F: Fn(&SegmentRequest) -> Result<SegmentResponse> + Send + Sync,
{
    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse> {
        self(request)
    }
}

/// One line of a recorded-response fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub request_hash: String,
    pub response: SegmentResponse,
}

/// Replays recorded responses keyed by request hash.
#[derive(Debug, Clone, Default)]
pub struct FixturePort {
    responses: HashMap<String, SegmentResponse>,
}

impl FixturePort {
    pub fn from_jsonl(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))?;
        let mut responses = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: FixtureLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            responses.insert(l.request_hash, l.response);
        }
        Ok(FixturePort { responses })
    }

    pub fn insert(&mut self, request: &SegmentRequest, response: SegmentResponse) {
        self.responses.insert(request.hash(), response);
    }

    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<_> = self.responses.keys().collect();
        keys.sort();
        keys.into_iter()
            .map(|k| {
                serde_json::to_string(&FixtureLine {
                    request_hash: k.clone(),
                    response: self.responses[k].clone(),
                })
                .expect("fixture line serializes")
                    + "\n"
            })
            .collect()
    }
}

impl SegmenterPort for FixturePort {
    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse> {
        self.responses
            .get(&request.hash())
            .cloned()
            .ok_or_else(|| Error::Port(format!("no recorded response for {}", request.hash())))
    }
}

/// Line-delimited JSON over a child process's stdin/stdout.
pub struct SubprocessPort {
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl SubprocessPort {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessPort {
            io: Mutex::new((child, stdin, stdout)),
        })
    }
}

impl SegmenterPort for SubprocessPort {
    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse> {
        let mut guard = self.io.lock().map_err(|_| Error::Port("subprocess lock poisoned".into()))?;
        let (_, stdin, stdout) = &mut *guard;
        let line = serde_json::to_string(request)?;
        writeln!(stdin, "{line}").and_then(|_| stdin.flush()).map_err(|e| Error::Port(e.to_string()))?;
        let mut reply = String::new();
        let n = stdout.read_line(&mut reply).map_err(|e| Error::Port(e.to_string()))?;
        if n == 0 {
            return Err(Error::Port("segmenter process closed its output".into()));
        }
        serde_json::from_str(&reply).map_err(|e| Error::Port(format!("bad response: {e}")))
    }
}

impl Drop for SubprocessPort {
    fn drop(&mut self) {
        if let Ok(mut g) = self.io.lock() {
            let _ = g.0.kill();
            let _ = g.0.wait();
        }
    }
}

/// Finds `needle` in `hay` starting at char `from`, first exactly, then with
/// any run of whitespace matching any other. Returns char offsets.
pub fn locate(hay: &str, needle: &str, from: usize) -> Option<(usize, usize)> {
    let needle = needle.trim();
    if needle.is_empty() {
        return None;
    }
    let from_b = crate::text::byte_offset(hay, from);
    if let Some(b) = hay[from_b..].find(needle) {
        let s = char_offset(hay, from_b + b);
        return Some((s, s + needle.chars().count()));
    }
    // whitespace-tolerant: compress both sides
    let hay_chars: Vec<char> = hay.chars().collect();
    let mut norm = Vec::new();
    let mut map = Vec::new();
    for (i, &c) in hay_chars.iter().enumerate().skip(from) {
        if c.is_whitespace() {
            if norm.last() != Some(&' ') {
                norm.push(' ');
                map.push(i);
            }
        } else {
            norm.push(c);
            map.push(i);
        }
    }
    let target: Vec<char> = normalize_space(needle).chars().collect();
    let pos = norm.windows(target.len()).position(|w| w == target.as_slice())?;
    Some((map[pos], map[pos + target.len() - 1] + 1))
}

fn trim_arg(text: &str, start: usize, end: usize) -> (usize, usize) {
    // char offsets; drop surrounding whitespace and edge punctuation
    let chars: Vec<char> = text.chars().collect();
    let (mut s, mut e) = (start, end);
    let edge = |c: char| c.is_whitespace() || (!c.is_alphanumeric() && !is_quote(c) && c != ')' && c != '(');
    while s < e && edge(chars[s]) {
        s += 1;
    }
    while e > s && edge(chars[e - 1]) {
        e -= 1;
    }
    (s, e)
}

/// Deterministic clause heuristic. Arg2 runs from the relation position to the
/// end of the marked sentence; Arg1 is the preceding clause, or the previous
/// sentence when the relation sits at a sentence start.
pub fn fallback_spans(ctx: &ContextWindow) -> Option<ArgSpans> {
    let text = ctx.text();
    let cur0 = ctx.current_offset();
    let cur_len = ctx.current.chars().count();
    let arg2 = trim_arg(&text, cur0 + ctx.relation_offset, cur0 + cur_len);
    let arg1 = if ctx.relation_offset == 0 {
        if ctx.prev.is_empty() {
            return None;
        }
        trim_arg(&text, 0, ctx.prev.chars().count())
    } else {
        let rel_b = crate::text::byte_offset(&ctx.current, ctx.relation_offset);
        let starts = clause_starts(&ctx.current, ctx.language.as_str());
        let clause_b = starts.iter().copied().filter(|&c| c < rel_b).max().unwrap_or(0);
        let clause_c = char_offset(&ctx.current, clause_b);
        let (s, mut e) = trim_arg(&text, cur0 + clause_c, cur0 + ctx.relation_offset);
        // a trailing coordinating conjunction belongs to neither argument
        let conj = coordinating_conjunctions(ctx.language.as_str());
        let span_text = char_slice(&text, s, e).to_string();
        if let Some(last) = tokenize(&span_text).last() {
            if conj.contains(&last.text.as_str()) && last.end == span_text.len() {
                let cut = char_offset(&span_text, last.start);
                e = trim_arg(&text, s, s + cut).1;
            }
        }
        (s, e)
    };
    let spans = ArgSpans {
        arg1,
        arg2,
        source: SpanSource::Fallback,
    };
    validate_spans(&spans, ctx).ok().map(|_| spans)
}

/// Accepted spans plus the audit records produced on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub spans: ArgSpans,
    pub trail: Vec<FilterRecord>,
}

fn map_response(ctx: &ContextWindow, resp: &SegmentResponse) -> std::result::Result<ArgSpans, SpanIssue> {
    let text = ctx.text();
    let clean = |s: &str| strip_markers(s);
    let a = locate(&text, &clean(&resp.arg1_text), 0).ok_or(SpanIssue::NotSubstring)?;
    let b = locate(&text, &clean(&resp.arg2_text), a.1)
        .or_else(|| locate(&text, &clean(&resp.arg2_text), 0))
        .ok_or(SpanIssue::NotSubstring)?;
    let spans = ArgSpans {
        arg1: a,
        arg2: b,
        source: SpanSource::External,
    };
    validate_spans(&spans, ctx)?;
    Ok(spans)
}

/// Asks the port for spans, validates them, and falls back to the clause
/// heuristic when the port fails or answers with invalid spans. `Err` carries
/// the trail when neither route yields valid spans.
pub fn segment_arguments(
    ctx: &ContextWindow,
    port: Option<&dyn SegmenterPort>,
    few_shot: bool,
) -> std::result::Result<Segmented, Vec<FilterRecord>> {
    let mut trail = Vec::new();
    if let Some(port) = port {
        let req = SegmentRequest::for_context(ctx, few_shot);
        match port.segment(&req) {
            Ok(resp) => match map_response(ctx, &resp) {
                Ok(spans) => {
                    trail.push(FilterRecord::pass("segmentation", "external"));
                    return Ok(Segmented { spans, trail });
                }
                Err(issue) => trail.push(FilterRecord::fail(
                    "external_spans",
                    format!("rejected: {}", issue.as_str()),
                )),
            },
            Err(e) => trail.push(FilterRecord::fail("external_spans", format!("port error: {e}"))),
        }
    }
    match fallback_spans(ctx) {
        Some(spans) => {
            trail.push(FilterRecord::pass("segmentation", "fallback"));
            Ok(Segmented { spans, trail })
        }
        None => {
            trail.push(FilterRecord::fail("segmentation", "fallback spans invalid"));
            Err(trail)
        }
    }
}

/// Segments many contexts with at most `max_in_flight` concurrent port calls.
/// Results come back sorted by id.
pub fn segment_many(
    items: Vec<(String, ContextWindow)>,
    port: Option<&dyn SegmenterPort>,
    few_shot: bool,
    max_in_flight: usize,
) -> Result<Vec<(String, std::result::Result<Segmented, Vec<FilterRecord>>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Port(e.to_string()))?;
    let mut out: Vec<_> = pool.install(|| {
        items
            .into_par_iter()
            .map(|(id, ctx)| {
                let r = segment_arguments(&ctx, port, few_shot);
                (id, r)
            })
            .collect()
    });
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segs(texts: &[&str]) -> Vec<SubtitleSegment> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| SubtitleSegment {
                talk_id: "t".into(),
                index: i,
                start_ms: i as u64 * 2000,
                end_ms: i as u64 * 2000 + 1500,
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn abbreviation_guard() {
        let s = "Dr. Smith left. He was tired.";
        let sents: Vec<&str> = split_sentences(s).iter().map(|&(a, b)| &s[a..b]).collect();
        assert_eq!(sents, ["Dr. Smith left.", "He was tired."]);
    }

    #[test]
    fn lowercase_after_period_does_not_split() {
        let s = "It costs 3.5 dollars. that is odd! Really?";
        let sents: Vec<&str> = split_sentences(s).iter().map(|&(a, b)| &s[a..b]).collect();
        assert_eq!(sents, ["It costs 3.5 dollars. that is odd!", "Really?"]);
    }

    #[test]
    fn middle_hit_has_full_context() {
        let s = segs(&["First one.", "Second one.", "Third one."]);
        let ctx = build_context(&s, 1, &"en".into());
        assert_eq!((ctx.prev.as_str(), ctx.current.as_str(), ctx.next.as_str()), ("First one.", "Second one.", "Third one."));
        assert_eq!(ctx.marked_text, "First one. [[REL]]Second one.[[/REL]] Third one.");
        assert_eq!(ctx.origin.sentence_index, 1);
    }

    #[test]
    fn first_segment_has_empty_prev() {
        let s = segs(&["First one.", "Second one."]);
        let ctx = build_context(&s, 0, &"en".into());
        assert_eq!(ctx.prev, "");
        assert_eq!(ctx.current, "First one.");
    }

    #[test]
    fn markers_strip_back_to_text() {
        let s = segs(&["A b.", "C  d.", "E f."]);
        let ctx = build_context(&s, 1, &"en".into());
        assert_eq!(normalize_space(&strip_markers(&ctx.marked_text)), normalize_space(&ctx.text()));
    }

    #[test]
    fn fallback_between_sentences() {
        let s = segs(&["I was tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let spans = fallback_spans(&ctx).unwrap();
        let t = ctx.text();
        assert_eq!(spans.arg1_text(&t), "I was tired");
        assert_eq!(spans.arg2_text(&t), "I went home");
    }

    #[test]
    fn fallback_inside_sentence() {
        let s = segs(&["It rained all day, we stayed inside."]);
        let anchor = RelationAnchor {
            segment_index: 0,
            sentence: 0,
            clause: 1,
            boundary: Boundary::ClauseInitial,
        };
        let ctx = build_context_at(&s, &anchor, &"en".into()).unwrap();
        assert!(!ctx.is_inter_sentential());
        let spans = fallback_spans(&ctx).unwrap();
        let t = ctx.text();
        assert_eq!(spans.arg1_text(&t), "It rained all day");
        assert_eq!(spans.arg2_text(&t), "we stayed inside");
    }

    #[test]
    fn second_sentence_of_segment() {
        let s = segs(&["Intro here.", "I was tired. I went home.", "The end."]);
        let anchor = RelationAnchor {
            segment_index: 1,
            sentence: 1,
            clause: 0,
            boundary: Boundary::SentenceInitial,
        };
        let ctx = build_context_at(&s, &anchor, &"en".into()).unwrap();
        assert_eq!(ctx.current, "I went home.");
        assert_eq!(ctx.prev, "I was tired.");
        assert_eq!(ctx.origin.sentence_index, 2);
    }

    #[test]
    fn validation_reasons() {
        let s = segs(&["I was tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let ok = ArgSpans { arg1: (0, 11), arg2: (13, 24), source: SpanSource::External };
        assert_eq!(validate_spans(&ok, &ctx), Ok(()));
        let same = ArgSpans { arg1: (0, 11), arg2: (0, 11), ..ok };
        assert_eq!(validate_spans(&same, &ctx), Err(SpanIssue::Overlap));
        let swapped = ArgSpans { arg1: (13, 24), arg2: (0, 11), ..ok };
        assert_eq!(validate_spans(&swapped, &ctx), Err(SpanIssue::Order));
        let oob = ArgSpans { arg2: (13, 99), ..ok };
        assert_eq!(validate_spans(&oob, &ctx), Err(SpanIssue::OutOfBounds));
    }

    #[test]
    fn external_non_substring_falls_back() {
        let s = segs(&["I was tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let port = |_: &SegmentRequest| {
            Ok(SegmentResponse { arg1_text: "nothing like this".into(), arg2_text: "I went home".into() })
        };
        let out = segment_arguments(&ctx, Some(&port), true).unwrap();
        assert_eq!(out.spans.source, SpanSource::Fallback);
        assert!(out.trail[0].detail.contains("not a substring"));
    }

    #[test]
    fn external_overlap_falls_back() {
        let s = segs(&["I was tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let port = |_: &SegmentRequest| {
            Ok(SegmentResponse { arg1_text: "I was tired. I went".into(), arg2_text: "went home".into() })
        };
        let out = segment_arguments(&ctx, Some(&port), true).unwrap();
        assert_eq!(out.spans.source, SpanSource::Fallback);
        assert!(out.trail[0].detail.contains("overlap"));
    }

    #[test]
    fn external_whitespace_tolerant() {
        let s = segs(&["I was   tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let port = |_: &SegmentRequest| {
            Ok(SegmentResponse { arg1_text: "was tired".into(), arg2_text: "[[REL]]I went home".into() })
        };
        let out = segment_arguments(&ctx, Some(&port), false).unwrap();
        assert_eq!(out.spans.source, SpanSource::External);
        assert_eq!(out.spans.arg1_text(&ctx.text()), "was tired");
    }

    #[test]
    fn fixture_port_replays() {
        let s = segs(&["I was tired.", "I went home."]);
        let ctx = build_context(&s, 1, &"en".into());
        let req = SegmentRequest::for_context(&ctx, true);
        let mut port = FixturePort::default();
        port.insert(&req, SegmentResponse { arg1_text: "I was tired".into(), arg2_text: "I went home".into() });
        let replay = FixturePort::from_jsonl(port.to_jsonl().as_bytes()).unwrap();
        let out = segment_arguments(&ctx, Some(&replay), true).unwrap();
        assert_eq!(out.spans.source, SpanSource::External);
        // a different few-shot flag is a different request
        assert!(replay.segment(&SegmentRequest::for_context(&ctx, false)).is_err());
    }

    #[test]
    fn no_prev_sentence_means_no_fallback() {
        let s = segs(&["I went home."]);
        let ctx = build_context(&s, 0, &"en".into());
        assert!(segment_arguments(&ctx, None, false).is_err());
    }

    #[test]
    fn fallback_is_deterministic() {
        let s = segs(&["One thing happened.", "Then, another thing, and a third.", "Done."]);
        let ctx = build_context(&s, 1, &"en".into());
        assert_eq!(fallback_spans(&ctx), fallback_spans(&ctx));
    }
}
