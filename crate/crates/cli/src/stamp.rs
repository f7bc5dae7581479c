//! Content-hash provenance stamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{stages, PipelineConfig, Stage};

const STAMP_FORMAT: &str = "idrkit-stamp-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub format: String,
    pub stage: String,
    pub input_hash: String,
    /// Path relative to the stage directory → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

fn stamp_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(".stamps").join(format!("{}.json", stage.name()))
}

pub fn exists(out: &Path, stage: Stage) -> bool {
    stamp_path(out, stage).is_file()
}

pub fn read(out: &Path, stage: Stage) -> anyhow::Result<Stamp> {
    let p = stamp_path(out, stage);
    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
    Ok(serde_json::from_str(&text)?)
}

/// Drops the stamp and the stage's previous artifacts.
pub fn clear(out: &Path, stage: Stage) -> anyhow::Result<()> {
    let p = stamp_path(out, stage);
    if p.exists() {
        std::fs::remove_file(&p)?;
    }
    let dir = out.join(stage.name());
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| dir.display().to_string())?;
    }
    Ok(())
}

pub fn file_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every file under `dir`, as sorted `/`-separated relative paths.
pub fn walk(dir: &Path) -> anyhow::Result<Vec<String>> {
    fn go(root: &Path, dir: &Path, acc: &mut Vec<String>) -> anyhow::Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| dir.display().to_string())? {
            let p = entry?.path();
            if p.is_dir() {
                go(root, &p, acc)?;
            } else {
                let rel = p.strip_prefix(root)?;
                acc.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut acc = Vec::new();
    if dir.is_dir() {
        go(dir, dir, &mut acc)?;
    }
    acc.sort();
    Ok(acc)
}

fn dir_hashes(dir: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    walk(dir)?.into_iter().map(|rel| Ok((rel.clone(), file_hash(&dir.join(&rel))?))).collect()
}

/// Hash of the stage's configuration, external input files and the current
/// bytes of every upstream artifact.
pub fn input_hash(cfg: &PipelineConfig, stage: Stage) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    let mut feed = |tag: &str, value: &str| {
        h.update(tag.as_bytes());
        h.update([0]);
        h.update(value.as_bytes());
        h.update([0]);
    };
    feed("format", STAMP_FORMAT);
    feed("version", env!("CARGO_PKG_VERSION"));
    feed("stage", stage.name());
    feed("config", &serde_json::to_string(&stages::config_fragment(cfg, stage))?);
    for (label, path) in stages::external_inputs(cfg, stage)? {
        feed(&format!("input:{label}"), &file_hash(&path)?);
    }
    for &u in stage.upstream() {
        for (rel, hash) in dir_hashes(&cfg.output.join(u.name()))? {
            feed(&format!("{}/{rel}", u.name()), &hash);
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write(out: &Path, stage: Stage, input_hash: &str) -> anyhow::Result<()> {
    let stamp = Stamp {
        format: STAMP_FORMAT.into(),
        stage: stage.name().into(),
        input_hash: input_hash.into(),
        outputs: dir_hashes(&out.join(stage.name()))?,
    };
    let p = stamp_path(out, stage);
    std::fs::create_dir_all(p.parent().expect("stamp dir"))?;
    crate::write_json(&p, &stamp)
}

/// True when the stamp matches the current inputs and every recorded output
/// is still there with the same bytes.
pub fn check(cfg: &PipelineConfig, stage: Stage) -> anyhow::Result<bool> {
    if !exists(&cfg.output, stage) {
        return Ok(false);
    }
    let stamp = match read(&cfg.output, stage) {
        Ok(s) if s.format == STAMP_FORMAT => s,
        _ => return Ok(false),
    };
    if stamp.input_hash != input_hash(cfg, stage)? {
        return Ok(false);
    }
    let dir = cfg.output.join(stage.name());
    for (rel, hash) in &stamp.outputs {
        let p = dir.join(rel);
        if !p.is_file() || &file_hash(&p)? != hash {
            return Ok(false);
        }
    }
    Ok(true)
}
