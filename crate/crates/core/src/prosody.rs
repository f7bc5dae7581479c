//! Per-word prosodic descriptors and log-mel features.
//!
//! Each word gets nine numbers, in this order:
//!
//! | # | feature | unit |
//! |---|---------|------|
//! | 0 | `f0_mean` | Hz over voiced frames |
//! | 1 | `f0_std` | Hz |
//! | 2 | `f0_slope` | Hz/s, least-squares fit over voiced frames |
//! | 3 | `energy_mean` | frame RMS |
//! | 4 | `energy_std` | frame RMS |
//! | 5 | `duration` | s |
//! | 6 | `pause_before` | s |
//! | 7 | `pause_after` | s |
//! | 8 | `voiced_ratio` | fraction of frames |
//!
//! Pitch comes from the YIN cumulative-mean-normalized difference function on
//! 40 ms frames every 10 ms, with a median-3 smoother over the voiced track.
//! A frame is voiced when its periodicity `1 - d'(tau)` reaches 0.45.
//! Energy is the RMS of the central 25 ms of each frame.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, WordTimestamp, CANONICAL_RATE};
use crate::error::{Error, Result};

pub const PROSODY_DIM: usize = 9;
pub const PROSODY_VERSION: &str = "prosody-v1-talkz";
pub const LOGMEL_VERSION: &str = "logmel-v1";

pub const FEATURE_NAMES: [&str; PROSODY_DIM] = [
    "f0_mean",
    "f0_std",
    "f0_slope",
    "energy_mean",
    "energy_std",
    "duration",
    "pause_before",
    "pause_after",
    "voiced_ratio",
];

pub const VOICING_THRESHOLD: f64 = 0.45;
const YIN_DIP: f64 = 0.15;
const F0_MIN: f64 = 70.0;
const F0_MAX: f64 = 500.0;
const SILENCE_RMS: f64 = 1e-4;

/// Frame geometry for the prosody tracker, in seconds.
const PITCH_FRAME: f64 = 0.040;
const ENERGY_FRAME: f64 = 0.025;
const HOP: f64 = 0.010;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyMatrix {
    pub rows: Vec<[f64; PROSODY_DIM]>,
    pub word_refs: Vec<WordTimestamp>,
}

impl ProsodyMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows.len(), PROSODY_DIM), |(i, j)| self.rows[i][j])
    }
}

/// Pitch estimate for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    pub f0: f64,
    pub periodicity: f64,
    pub voiced: bool,
}

/// YIN on a single frame. The lag search covers 70–500 Hz.
pub fn yin_pitch(frame: &[f64], sample_rate: f64) -> PitchFrame {
    let tau_min = (sample_rate / F0_MAX).floor() as usize;
    let tau_max = ((sample_rate / F0_MIN).ceil() as usize).min(frame.len() / 2);
    let unvoiced = PitchFrame {
        f0: 0.0,
        periodicity: 0.0,
        voiced: false,
    };
    if tau_max <= tau_min + 2 {
        return unvoiced;
    }
    let width = frame.len() - tau_max;
    let mut diff = vec![0.0; tau_max + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        *d = (0..width).map(|j| (frame[j] - frame[j + tau]).powi(2)).sum();
    }
    let mut cmnd = vec![1.0; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 { diff[tau] * tau as f64 / running } else { 1.0 };
    }
    let mut best = (tau_min..=tau_max).find(|&t| cmnd[t] < YIN_DIP);
    if let Some(mut t) = best {
        while t < tau_max && cmnd[t + 1] < cmnd[t] {
            t += 1;
        }
        best = Some(t);
    }
    let tau = best.unwrap_or_else(|| {
        (tau_min..=tau_max)
            .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
            .expect("non-empty lag range")
    });
    let periodicity = 1.0 - cmnd[tau];
    // parabolic refinement
    let refined = if tau > tau_min && tau < tau_max {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + 0.5 * (a - c) / denom
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };
    PitchFrame {
        f0: sample_rate / refined,
        periodicity,
        voiced: periodicity >= VOICING_THRESHOLD,
    }
}

fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    if ts.len() < 2 {
        return 0.0;
    }
    let (mt, _) = mean_std(ts);
    let (my, _) = mean_std(ys);
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum::<f64>() / sxx
}

fn median3(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            if i == 0 || i + 1 == xs.len() {
                return xs[i];
            }
            let mut w = [xs[i - 1], xs[i], xs[i + 1]];
            w.sort_by(f64::total_cmp);
            w[1]
        })
        .collect()
}

/// One analysis frame of a clip.
#[derive(Debug, Clone, Copy)]
struct Frame {
    /// centre time relative to the clip start
    centre: f64,
    pitch: PitchFrame,
    energy: f64,
}

struct FrameTrack {
    frames: Vec<Frame>,
    frame_len: usize,
    hop: usize,
    rate: f64,
}

impl FrameTrack {
    fn new(samples: &[f32], rate: u32) -> Self {
        let rate_f = rate as f64;
        let frame_len = (PITCH_FRAME * rate_f).round() as usize;
        let energy_len = (ENERGY_FRAME * rate_f).round() as usize;
        let hop = (HOP * rate_f).round() as usize;
        let n = samples.len();
        let count = if n <= frame_len { 1 } else { (n - frame_len) / hop + 1 };
        let frames = (0..count)
            .map(|k| {
                let s = k * hop;
                let buf: Vec<f64> = (s..s + frame_len).map(|i| samples.get(i).copied().unwrap_or(0.0) as f64).collect();
                let off = (frame_len - energy_len) / 2;
                let energy = rms(&buf[off..off + energy_len]);
                let mut pitch = yin_pitch(&buf, rate_f);
                if energy < SILENCE_RMS {
                    pitch = PitchFrame {
                        f0: 0.0,
                        periodicity: 0.0,
                        voiced: false,
                    };
                }
                Frame {
                    centre: (s as f64 + frame_len as f64 / 2.0) / rate_f,
                    pitch,
                    energy,
                }
            })
            .collect();
        FrameTrack {
            frames,
            frame_len,
            hop,
            rate: rate_f,
        }
    }

    /// Frames lying entirely inside [start, end) (clip-relative seconds), or
    /// the single frame nearest the midpoint when none do.
    fn frames_for(&self, start: f64, end: f64) -> Vec<Frame> {
        let half = self.frame_len as f64 / 2.0 / self.rate;
        let inside: Vec<Frame> = self
            .frames
            .iter()
            .filter(|f| f.centre - half >= start - 1e-9 && f.centre + half <= end + 1e-9)
            .copied()
            .collect();
        if !inside.is_empty() {
            return inside;
        }
        let mid = (start + end) / 2.0;
        let _ = self.hop;
        vec![*self
            .frames
            .iter()
            .min_by(|a, b| (a.centre - mid).abs().total_cmp(&(b.centre - mid).abs()))
            .expect("at least one frame")]
    }
}

/// Raw (unnormalized) prosody for the words of a clip. Word times are
/// absolute talk times; the clip's origin gives the offset.
pub fn extract_raw_prosody(clip: &AudioClip, words: &[WordTimestamp]) -> ProsodyMatrix {
    let track = FrameTrack::new(&clip.samples, clip.sample_rate);
    let t0 = clip.origin.span.start;
    let clip_end = clip.samples.len() as f64 / clip.sample_rate as f64;
    let mut rows = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let (s, e) = (w.start - t0, w.end - t0);
        let frames = track.frames_for(s, e);
        let voiced: Vec<&Frame> = frames.iter().filter(|f| f.pitch.voiced).collect();
        let f0s = median3(&voiced.iter().map(|f| f.pitch.f0).collect::<Vec<_>>());
        let ts: Vec<f64> = voiced.iter().map(|f| f.centre).collect();
        let (f0_mean, f0_std) = mean_std(&f0s);
        let energies: Vec<f64> = frames.iter().map(|f| f.energy).collect();
        let (e_mean, e_std) = mean_std(&energies);
        let prev_end = if i == 0 { 0.0 } else { words[i - 1].end - t0 };
        let next_start = words.get(i + 1).map(|n| n.start - t0).unwrap_or(clip_end);
        rows.push([
            f0_mean,
            f0_std,
            slope(&ts, &f0s),
            e_mean,
            e_std,
            (e - s).max(0.0),
            (s - prev_end).max(0.0),
            (next_start - e).max(0.0),
            voiced.len() as f64 / frames.len() as f64,
        ]);
    }
    ProsodyMatrix {
        rows,
        word_refs: words.to_vec(),
    }
}

/// Running per-talk feature statistics for z-normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkProsodyStats {
    pub count: usize,
    pub mean: [f64; PROSODY_DIM],
    m2: [f64; PROSODY_DIM],
}

impl Default for TalkProsodyStats {
    fn default() -> Self {
        TalkProsodyStats {
            count: 0,
            mean: [0.0; PROSODY_DIM],
            m2: [0.0; PROSODY_DIM],
        }
    }
}

impl TalkProsodyStats {
    pub fn add(&mut self, row: &[f64; PROSODY_DIM]) {
        self.count += 1;
        let n = self.count as f64;
        for k in 0..PROSODY_DIM {
            let d = row[k] - self.mean[k];
            self.mean[k] += d / n;
            self.m2[k] += d * (row[k] - self.mean[k]);
        }
    }

    pub fn add_matrix(&mut self, m: &ProsodyMatrix) {
        m.rows.iter().for_each(|r| self.add(r));
    }

    pub fn std(&self) -> [f64; PROSODY_DIM] {
        let mut s = [0.0; PROSODY_DIM];
        if self.count > 0 {
            for (k, v) in s.iter_mut().enumerate() {
                *v = (self.m2[k] / self.count as f64).sqrt();
            }
        }
        s
    }

    /// z-scores; a constant feature maps to 0.
    pub fn normalize(&self, m: &ProsodyMatrix) -> ProsodyMatrix {
        let std = self.std();
        let rows = m
            .rows
            .iter()
            .map(|r| {
                let mut z = [0.0; PROSODY_DIM];
                for k in 0..PROSODY_DIM {
                    z[k] = if std[k] > 1e-8 { (r[k] - self.mean[k]) / std[k] } else { 0.0 };
                }
                z
            })
            .collect();
        ProsodyMatrix {
            rows,
            word_refs: m.word_refs.clone(),
        }
    }
}

/// Prosody z-normalized with the talk's accumulated statistics.
pub fn extract_prosody(clip: &AudioClip, words: &[WordTimestamp], talk: &TalkProsodyStats) -> ProsodyMatrix {
    talk.normalize(&extract_raw_prosody(clip, words))
}

/// Log-mel frames (mel bins x frames) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub frames: Array2<f64>,
    pub mask: Vec<bool>,
}

impl LogMel {
    pub fn n_mels(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }

    /// Appends `extra` masked frames filled with `value`.
    pub fn padded(&self, extra: usize, value: f64) -> LogMel {
        let (f, t) = self.frames.dim();
        let mut frames = Array2::from_elem((f, t + extra), value);
        frames.slice_mut(ndarray::s![.., ..t]).assign(&self.frames);
        let mut mask = self.mask.clone();
        mask.extend(std::iter::repeat_n(false, extra));
        LogMel { frames, mask }
    }
}

/// Pads every item to the longest frame count.
pub fn pad_batch(items: &[LogMel]) -> Vec<LogMel> {
    let t = items.iter().map(LogMel::n_frames).max().unwrap_or(0);
    items.iter().map(|m| m.padded(t - m.n_frames(), 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            sample_rate: CANONICAL_RATE,
            n_fft: 400,
            hop: 160,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            floor: 1e-10,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        m * F_SP
    }
}

/// Triangular mel filters over the one-sided FFT bins. Each row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// Lower edge, centre and upper edge of each triangle in Hz.
    pub edges: Vec<(f64, f64, f64)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
        let mut weights = Array2::zeros((n_mels, n_bins));
        let mut edges = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            edges.push((l, c, r));
            for k in 0..n_bins {
                let f = bin_hz(k);
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
            let s: f64 = weights.row(m).sum();
            if s > 0.0 {
                weights.row_mut(m).mapv_inplace(|w| w / s);
            }
        }
        MelFilterbank { weights, edges }
    }
}

/// Reusable log-mel front end.
pub struct LogMelExtractor {
    config: LogMelConfig,
    bank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: LogMelConfig) -> Self {
        let bank = MelFilterbank::new(config.n_mels, config.n_fft, config.sample_rate, config.fmin, config.fmax);
        let n = config.n_fft;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        LogMelExtractor {
            config,
            bank,
            window,
            fft,
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// Frame count for `n` samples: `floor((n - n_fft) / hop) + 1`, at least 1.
    pub fn frame_count(&self, n: usize) -> usize {
        if n <= self.config.n_fft {
            1
        } else {
            (n - self.config.n_fft) / self.config.hop + 1
        }
    }

    pub fn compute(&self, samples: &[f32]) -> LogMel {
        let (n_fft, hop) = (self.config.n_fft, self.config.hop);
        let t = self.frame_count(samples.len());
        let n_bins = n_fft / 2 + 1;
        let mut frames = Array2::zeros((self.config.n_mels, t));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_bins];
        for f in 0..t {
            for (i, b) in buf.iter_mut().enumerate() {
                let x = samples.get(f * hop + i).copied().unwrap_or(0.0) as f64;
                *b = Complex::new(x * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for m in 0..self.config.n_mels {
                let e: f64 = self.bank.weights.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                frames[[m, f]] = e.max(self.config.floor).ln();
            }
        }
        LogMel {
            frames,
            mask: vec![true; t],
        }
    }
}

/// 25 ms / 10 ms, 128-bin log-mel of a 16 kHz clip.
pub fn compute_logmel(clip: &AudioClip) -> Result<LogMel> {
    if clip.sample_rate != CANONICAL_RATE {
        return Err(Error::Contract(format!(
            "log-mel expects {CANONICAL_RATE} Hz audio, got {}",
            clip.sample_rate
        )));
    }
    Ok(LogMelExtractor::new(LogMelConfig::default()).compute(&clip.samples))
}

/// Writes a `{rows, cols}` header followed by little-endian f32 values.
pub fn write_blob(path: &Path, rows: usize, cols: usize, data: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + rows * cols * 4);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    let mut n = 0;
    for v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
        n += 1;
    }
    if n != rows * cols {
        return Err(Error::Contract(format!("blob has {n} values, header says {rows}x{cols}")));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::Validation(format!("{}: truncated feature blob", path.display())));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + rows * cols * 4 {
        return Err(Error::Validation(format!("{}: blob size does not match header", path.display())));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn write_prosody_blob(path: &Path, m: &ProsodyMatrix) -> Result<()> {
    write_blob(path, m.rows.len(), PROSODY_DIM, m.rows.iter().flat_map(|r| r.iter().copied()))
}

pub fn read_prosody_blob(path: &Path) -> Result<Array2<f64>> {
    let (r, c, d) = read_blob(path)?;
    if c != PROSODY_DIM {
        return Err(Error::Validation(format!("{}: expected {PROSODY_DIM} columns", path.display())));
    }
    Ok(Array2::from_shape_fn((r, c), |(i, j)| d[i * c + j] as f64))
}

pub fn write_logmel_blob(path: &Path, m: &LogMel) -> Result<()> {
    let (f, t) = m.frames.dim();
    write_blob(path, f, t, m.frames.iter().copied())
}

pub fn read_logmel_blob(path: &Path) -> Result<LogMel> {
    let (f, t, d) = read_blob(path)?;
    Ok(LogMel {
        frames: Array2::from_shape_fn((f, t), |(i, j)| d[i * t + j] as f64),
        mask: vec![true; t],
    })
}
