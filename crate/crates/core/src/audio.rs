//! WAV I/O, word-timestamp ingestion, span-to-time alignment and clip cutting.

use std::path::Path;

use rubato::{FftFixedInOut, Resampler};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{char_edit_distance, tokenize};

pub const CANONICAL_RATE: u32 = 16_000;

/// Largest normalized edit distance accepted by [`align_span_to_time`].
pub const ALIGN_THRESHOLD: f64 = 0.3;

/// Mono PCM audio as floats in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16-bit PCM WAV, averaging channels down to mono.
pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Validation(format!(
            "{}: only 16-bit PCM WAV is supported (got {:?} {}-bit)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let ch = spec.channels as usize;
    let raw: Vec<i16> = reader.samples::<i16>().collect::<std::result::Result<_, _>>()?;
    let samples = raw
        .chunks(ch)
        .map(|frame| frame.iter().map(|&s| s as f32 / 32768.0).sum::<f32>() / ch as f32)
        .collect();
    Ok(Audio {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Reads a WAV and resamples it to 16 kHz mono when needed.
pub fn ingest_wav(path: &Path) -> Result<Audio> {
    let audio = read_wav(path)?;
    if audio.sample_rate == CANONICAL_RATE {
        return Ok(audio);
    }
    resample(&audio, CANONICAL_RATE)
}

pub fn resample(audio: &Audio, rate: u32) -> Result<Audio> {
    let mut rs = FftFixedInOut::<f32>::new(audio.sample_rate as usize, rate as usize, 1024, 1)
        .map_err(|e| Error::Validation(format!("resampler: {e}")))?;
    let want = (audio.samples.len() as f64 * rate as f64 / audio.sample_rate as f64).round() as usize;
    let delay = rs.output_delay();
    let mut out: Vec<f32> = Vec::with_capacity(want + delay);
    let mut pos = 0;
    let err = |e: rubato::ResampleError| Error::Validation(format!("resampler: {e}"));
    while pos + rs.input_frames_next() <= audio.samples.len() {
        let n = rs.input_frames_next();
        let chunk = rs.process(&[&audio.samples[pos..pos + n]], None).map_err(err)?;
        out.extend_from_slice(&chunk[0]);
        pos += n;
    }
    if pos < audio.samples.len() {
        let chunk = rs.process_partial(Some(&[&audio.samples[pos..]]), None).map_err(err)?;
        out.extend_from_slice(&chunk[0]);
    }
    while out.len() < want + delay {
        let chunk = rs.process_partial::<&[f32]>(None, None).map_err(err)?;
        out.extend_from_slice(&chunk[0]);
    }
    let samples = out[delay..delay + want].to_vec();
    Ok(Audio {
        samples,
        sample_rate: rate,
    })
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTimestamp {
    pub word: String,
    pub start: f64,
    pub end: f64,
}

/// Parses `{word, start, end}` JSON lines.
pub fn parse_word_timestamps(bytes: &[u8]) -> Result<Vec<WordTimestamp>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))?;
    let mut out: Vec<WordTimestamp> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let w: WordTimestamp = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !(w.end >= w.start) || w.start < 0.0 {
            return Err(Error::Validation(format!("line {}: word ends before it starts", n + 1)));
        }
        if out.last().is_some_and(|p| p.start > w.start) {
            return Err(Error::Validation(format!("line {}: word starts out of order", n + 1)));
        }
        out.push(w);
    }
    Ok(out)
}

pub fn write_word_timestamps(words: &[WordTimestamp]) -> String {
    words
        .iter()
        .map(|w| serde_json::to_string(w).expect("word serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(end > start) {
            return Err(Error::Validation(format!("time span end {end} is not after start {start}")));
        }
        Ok(TimeSpan { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

fn word_cost(a: &str, b: &str) -> f64 {
    if a == b {
        return 0.0;
    }
    let longest = a.chars().count().max(b.chars().count()).max(1);
    char_edit_distance(a, b) as f64 / longest as f64
}

/// Token-level edit distance where a substitution costs the normalized
/// character distance between the two words.
pub fn token_edit_distance(a: &[String], b: &[String]) -> f64 {
    let mut prev: Vec<f64> = (0..=b.len()).map(|j| j as f64).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i as f64; b.len() + 1];
        for j in 1..=b.len() {
            cur[j] = (prev[j - 1] + word_cost(&a[i - 1], &b[j - 1]))
                .min(prev[j] + 1.0)
                .min(cur[j - 1] + 1.0);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Best window of `words` for a span: word index range and normalized distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanMatch {
    pub first: usize,
    pub end: usize,
    pub distance: f64,
}

const TIE: f64 = 1e-9;

/// Semi-global alignment of the span tokens against the word sequence. Among
/// equal-cost windows the one ending earliest wins, then the shortest.
pub fn best_window(span_tokens: &[String], words: &[String]) -> Option<SpanMatch> {
    let (l, w) = (span_tokens.len(), words.len());
    if l == 0 || w == 0 {
        return None;
    }
    // (cost, start) per cell; start is the first word index of the window
    let mut prev: Vec<(f64, usize)> = (0..=w).map(|j| (0.0, j)).collect();
    for i in 1..=l {
        let mut cur = vec![(i as f64, 0usize); w + 1];
        for j in 1..=w {
            let cands = [
                (prev[j - 1].0 + word_cost(&span_tokens[i - 1], &words[j - 1]), prev[j - 1].1),
                (prev[j].0 + 1.0, prev[j].1),
                (cur[j - 1].0 + 1.0, cur[j - 1].1),
            ];
            let mut best = cands[0];
            for c in &cands[1..] {
                if c.0 < best.0 - TIE || ((c.0 - best.0).abs() <= TIE && c.1 > best.1) {
                    best = *c;
                }
            }
            cur[j] = best;
        }
        prev = cur;
    }
    let mut best: Option<SpanMatch> = None;
    for (j, &(cost, start)) in prev.iter().enumerate().skip(1) {
        if start >= j {
            continue;
        }
        let d = cost / l as f64;
        if best.is_none_or(|b| d < b.distance - TIE) {
            best = Some(SpanMatch {
                first: start,
                end: j,
                distance: d,
            });
        }
    }
    best
}

/// Maps a text span onto the word timestamps. Punctuation and case are
/// ignored on both sides.
pub fn align_span_to_time(span_text: &str, words: &[WordTimestamp]) -> Result<TimeSpan> {
    let (span, _) = align_span_detailed(span_text, words)?;
    Ok(span)
}

pub fn align_span_detailed(span_text: &str, words: &[WordTimestamp]) -> Result<(TimeSpan, SpanMatch)> {
    if words.is_empty() {
        return Err(Error::Contract("no word timestamps".into()));
    }
    let span_tokens: Vec<String> = tokenize(span_text).into_iter().map(|t| t.text).collect();
    let word_tokens: Vec<String> = words
        .iter()
        .map(|w| {
            tokenize(&w.word)
                .into_iter()
                .map(|t| t.text)
                .collect::<Vec<_>>()
                .join("")
        })
        .collect();
    let unalignable = |distance| Error::Unalignable {
        span: span_text.to_string(),
        distance,
    };
    let m = best_window(&span_tokens, &word_tokens).ok_or_else(|| unalignable(1.0))?;
    if m.distance > ALIGN_THRESHOLD {
        return Err(unalignable(m.distance));
    }
    let span = TimeSpan::new(words[m.first].start, words[m.end - 1].end).map_err(|_| unalignable(m.distance))?;
    Ok((span, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipOrigin {
    pub talk_id: String,
    pub span: TimeSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub origin: ClipOrigin,
}

impl AudioClip {
    pub fn as_audio(&self) -> Audio {
        Audio {
            samples: self.samples.clone(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Sample-accurate slice: starts at `round(start*rate)` and holds
/// `round((end-start)*rate)` samples. No resampling.
pub fn cut_audio(audio: &Audio, span: TimeSpan, talk_id: &str) -> Result<AudioClip> {
    let rate = audio.sample_rate as f64;
    if span.start < 0.0 || !(span.end > span.start) {
        return Err(Error::Range(format!("bad span [{}, {}]", span.start, span.end)));
    }
    let first = (span.start * rate).round() as usize;
    let len = (span.duration() * rate).round() as usize;
    if first + len > audio.samples.len() {
        return Err(Error::Range(format!(
            "span [{:.3}, {:.3}] exceeds audio duration {:.3}",
            span.start,
            span.end,
            audio.duration()
        )));
    }
    Ok(AudioClip {
        samples: audio.samples[first..first + len].to_vec(),
        sample_rate: audio.sample_rate,
        origin: ClipOrigin {
            talk_id: talk_id.to_string(),
            span,
        },
    })
}

/// Reads the WAV at `path` and cuts `span` out of it.
pub fn cut_wav_file(path: &Path, span: TimeSpan, talk_id: &str) -> Result<AudioClip> {
    cut_audio(&ingest_wav(path)?, span, talk_id)
}

/// Flags clips that are near-silent or clipped, for QC.
pub fn energy_anomaly(clip: &AudioClip) -> Option<&'static str> {
    if clip.samples.is_empty() {
        return Some("empty");
    }
    let n = clip.samples.len() as f64;
    let rms = (clip.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n).sqrt();
    if rms < 1e-4 {
        return Some("silent");
    }
    let clipped = clip.samples.iter().filter(|s| s.abs() >= 0.999).count() as f64;
    if clipped / n > 0.01 {
        return Some("clipped");
    }
    None
}
