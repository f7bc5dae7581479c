//! File-based contract with the review tool: session bundles go out,
//! verdict JSONL comes back and becomes a release filter.
//!
//! Importing verdicts never touches the mined instances. It only decides,
//! per instance, whether the release manifest keeps it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    Fix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    ExtraneousContent,
    EarlyCut,
    NotImplicit,
    WrongLabel,
}

impl ErrorClass {
    pub fn is_segmentation(self) -> bool {
        matches!(self, ErrorClass::ExtraneousContent | ErrorClass::EarlyCut)
    }
}

/// Character ranges into the instance's context text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectedSpans {
    pub arg1: [usize; 2],
    pub arg2: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub instance_id: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_spans: Option<CorrectedSpans>,
    pub reviewer_id: String,
    pub timestamp: String,
}

impl Verdict {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.decision {
            Decision::Fix if self.corrected_spans.is_none() => Err("fix requires corrected_spans".into()),
            Decision::Reject if self.error_class.is_none() => Err("reject requires error_class".into()),
            _ => Ok(()),
        }
    }
}

/// Parses and validates a verdict file; errors carry the 1-based row.
pub fn parse_verdicts(text: &str) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        v.validate().map_err(|message| Error::Parse { line: i + 1, message })?;
        out.push(v);
    }
    Ok(out)
}

/// Last writer wins per (instance, reviewer): later timestamp, then later row.
pub fn merge_verdicts(verdicts: &[Verdict]) -> Vec<Verdict> {
    let mut latest: BTreeMap<(&str, &str), &Verdict> = BTreeMap::new();
    for v in verdicts {
        let k = (v.instance_id.as_str(), v.reviewer_id.as_str());
        match latest.get(&k) {
            Some(prev) if prev.timestamp > v.timestamp => {}
            _ => {
                latest.insert(k, v);
            }
        }
    }
    latest.into_values().cloned().collect()
}

/// Sorted by (instance_id, reviewer_id), one verdict per line.
pub fn write_verdicts(verdicts: &[Verdict]) -> Result<String> {
    if verdicts.is_empty() {
        return Err(Error::Validation("no verdicts to export".into()));
    }
    let mut s = String::new();
    for v in merge_verdicts(verdicts) {
        s.push_str(&serde_json::to_string(&v)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ReleaseState {
    Retained,
    Excluded { error_class: Option<ErrorClass> },
    NeedsAdjudication,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReleaseFilter {
    pub states: BTreeMap<String, ReleaseState>,
}

impl ReleaseFilter {
    /// Unanimous accept or fix keeps an instance; unanimous reject drops it;
    /// any disagreement between reviewers holds it back for adjudication.
    pub fn from_verdicts(verdicts: &[Verdict]) -> Self {
        let mut by_instance: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
        for v in merge_verdicts(verdicts) {
            by_instance.entry(v.instance_id.clone()).or_default().push(v);
        }
        let states = by_instance
            .into_iter()
            .map(|(id, vs)| {
                let first = &vs[0];
                let agree = vs.iter().all(|v| v.decision == first.decision)
                    && (first.decision != Decision::Fix || vs.iter().all(|v| v.corrected_spans == first.corrected_spans));
                let state = if !agree {
                    ReleaseState::NeedsAdjudication
                } else if first.decision == Decision::Reject {
                    ReleaseState::Excluded {
                        error_class: first.error_class,
                    }
                } else {
                    ReleaseState::Retained
                };
                (id, state)
            })
            .collect();
        ReleaseFilter { states }
    }

    pub fn keeps(&self, instance_id: &str) -> bool {
        matches!(self.states.get(instance_id), None | Some(ReleaseState::Retained))
    }

    /// Unreviewed instances pass.
    pub fn apply(&self, manifest: &DatasetManifest) -> DatasetManifest {
        DatasetManifest {
            instances: manifest.instances.iter().filter(|e| self.keeps(&e.instance_id)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub verdicts: usize,
    pub segmentation_errors: usize,
    pub not_implicit: usize,
    pub wrong_label: usize,
    pub segmentation_rate: f64,
    pub not_implicit_rate: f64,
    pub wrong_label_rate: f64,
}

/// Rates over merged verdicts; a verdict counts toward its error class
/// whatever the decision (a `fix` for a truncated Arg2 is still a
/// segmentation error).
pub fn error_report(verdicts: &[Verdict]) -> ErrorReport {
    let merged = merge_verdicts(verdicts);
    let n = merged.len();
    let count = |f: fn(ErrorClass) -> bool| merged.iter().filter(|v| v.error_class.is_some_and(f)).count();
    let seg = count(ErrorClass::is_segmentation);
    let ni = count(|c| c == ErrorClass::NotImplicit);
    let wl = count(|c| c == ErrorClass::WrongLabel);
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    ErrorReport {
        verdicts: n,
        segmentation_errors: seg,
        not_implicit: ni,
        wrong_label: wl,
        segmentation_rate: rate(seg),
        not_implicit_rate: rate(ni),
        wrong_label_rate: rate(wl),
    }
}

/// Writes `session.jsonl` (a seeded sample of the manifest) and copies the
/// referenced clips next to it, keeping their relative paths so the bundle
/// resolves on its own. Missing clips are listed, not fatal.
pub fn export_session(
    manifest: &DatasetManifest,
    clips_root: &Path,
    out: &Path,
    sample: usize,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<String>)> {
    let mut picked: Vec<ManifestEntry> = manifest.instances.clone();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(sample);
    picked.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut missing = Vec::new();
    for e in &picked {
        for c in [&e.arg1_clip, &e.arg2_clip] {
            let src = clips_root.join(c);
            let dst = out.join(c);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
            if std::fs::copy(&src, &dst).is_err() {
                missing.push(c.clone());
            }
        }
    }
    let session = DatasetManifest { instances: picked.clone() };
    session.save(&out.join("session.jsonl"))?;
    Ok((picked, missing))
}
