//! `idrkit.toml`: where the corpus lives, which language pairs to mine, and
//! the knobs of every stage. Relative paths resolve against the directory
//! holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use idrkit::baselines::BaselineKind;
use idrkit::dataset::SplitSpec;
use idrkit::miner::Tolerance;
use idrkit::model::{Ablation, FusionConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// language code → lexicon TSV
    pub lexicons: BTreeMap<String, PathBuf>,
    /// source language → target languages, mined in that direction only
    pub pairs: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    /// language → ratios; languages not listed use the built-in defaults
    #[serde(default)]
    pub split: BTreeMap<String, Ratios>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "all_baselines")]
    pub baselines: Vec<BaselineKind>,
    #[serde(default)]
    pub gold: Option<PathBuf>,
    #[serde(default)]
    pub review: ReviewConfig,
}

fn all_baselines() -> Vec<BaselineKind> {
    vec![BaselineKind::TfidfLogreg, BaselineKind::ProsodicLogreg, BaselineKind::Combined]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    #[serde(default = "default_registry")]
    pub registry: PathBuf,
    /// `<talk>.<lang>.srt` or `<talk>.<lang>.json`
    #[serde(default = "default_subtitles")]
    pub subtitles: PathBuf,
    /// `<talk>.words.jsonl`
    #[serde(default = "default_asr")]
    pub asr: PathBuf,
}

fn default_registry() -> PathBuf {
    "talks.jsonl".into()
}
fn default_subtitles() -> PathBuf {
    "subtitles".into()
}
fn default_asr() -> PathBuf {
    "asr".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    /// Recorded responses keyed by request hash.
    pub fixture: Option<PathBuf>,
    /// Program and arguments speaking line-delimited JSON.
    pub command: Option<Vec<String>>,
    pub few_shot: bool,
    pub max_in_flight: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            fixture: None,
            command: None,
            few_shot: false,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ratios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub proj_dim: usize,
    pub attn_heads: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub tau: f64,
    pub gamma_init: f64,
    pub alpha: f64,
    pub prosody: bool,
    pub audio_stats: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        ModelConfig {
            d: f.d,
            proj_dim: f.proj_dim,
            attn_heads: f.attn_heads,
            conv1_channels: f.conv1_channels,
            conv2_channels: f.conv2_channels,
            tau: f.tau,
            gamma_init: f.gamma_init,
            alpha: f.alpha,
            prosody: true,
            audio_stats: true,
        }
    }
}

impl ModelConfig {
    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            d: self.d,
            proj_dim: self.proj_dim,
            attn_heads: self.attn_heads,
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            tau: self.tau,
            gamma_init: self.gamma_init,
            alpha: self.alpha,
            ablation: Ablation {
                prosody: self.prosody,
                audio_stats: self.audio_stats,
            },
            ..FusionConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub sample: usize,
    pub verdicts: Option<PathBuf>,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            sample: 100,
            verdicts: None,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub segmenter_fixture: Option<PathBuf>,
    pub verdicts: Option<PathBuf>,
    pub gold: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, applies overrides, resolves relative paths and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cwd = std::env::current_dir().unwrap_or_default();
        if let Some(o) = &overrides.output {
            cfg.output = cwd.join(o);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(f) = &overrides.segmenter_fixture {
            cfg.segmenter.fixture = Some(cwd.join(f));
        }
        if let Some(v) = &overrides.verdicts {
            cfg.review.verdicts = Some(cwd.join(v));
        }
        if let Some(g) = &overrides.gold {
            cfg.gold = Some(cwd.join(g));
        }
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let r = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        r(&mut self.output);
        r(&mut self.corpus.root);
        let root = self.corpus.root.clone();
        for p in [&mut self.corpus.registry, &mut self.corpus.subtitles, &mut self.corpus.asr] {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        self.lexicons.values_mut().for_each(r);
        if let Some(p) = self.segmenter.fixture.as_mut() {
            r(p);
        }
        if let Some(p) = self.gold.as_mut() {
            r(p);
        }
        if let Some(p) = self.review.verdicts.as_mut() {
            r(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let missing = |what: &str, p: &Path| CliError::Config(format!("{what} {} does not exist", p.display()));
        for (what, p) in [
            ("corpus root", &self.corpus.root),
            ("talk registry", &self.corpus.registry),
            ("subtitle directory", &self.corpus.subtitles),
        ] {
            if !p.exists() {
                return Err(missing(what, p));
            }
        }
        for (lang, p) in &self.lexicons {
            if !p.is_file() {
                return Err(missing(&format!("lexicon for {lang}"), p));
            }
        }
        if self.pairs.is_empty() {
            return Err(CliError::Config("no language pairs configured".into()));
        }
        for (src, targets) in &self.pairs {
            for l in std::iter::once(src).chain(targets) {
                if !self.lexicons.contains_key(l) {
                    return Err(CliError::Config(format!("pair {src}→{targets:?} uses {l}, which has no lexicon")));
                }
            }
            if targets.contains(src) {
                return Err(CliError::Config(format!("pair {src} lists itself as a target")));
            }
        }
        let t = &self.tolerance;
        if !(t.min_ratio > 0.0 && t.min_ratio <= t.max_ratio && (0.0..=1.0).contains(&t.min_overlap)) {
            return Err(CliError::Config(format!("tolerance out of range: {t:?}")));
        }
        for lang in self.split.keys() {
            self.split_spec(lang).validate().map_err(|e| CliError::Config(format!("split.{lang}: {e}")))?;
        }
        if let Some(p) = &self.segmenter.fixture {
            if !p.is_file() {
                return Err(missing("segmenter fixture", p));
            }
        }
        if self.segmenter.fixture.is_some() && self.segmenter.command.is_some() {
            return Err(CliError::Config("segmenter: set fixture or command, not both".into()));
        }
        if let Some(p) = &self.gold {
            if !p.is_file() {
                return Err(missing("gold file", p));
            }
        }
        self.model.fusion().validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(())
    }

    pub fn split_spec(&self, language: &str) -> SplitSpec {
        match self.split.get(language) {
            Some(r) => SplitSpec::new(r.train, r.validation, r.test, self.seed),
            None => SplitSpec::default_for(language, self.seed),
        }
    }

    pub fn targets_for(&self, source: &str) -> Vec<String> {
        self.pairs.get(source).cloned().unwrap_or_default()
    }
}
