//! Pipeline runner behind the `idrkit` binary.
//!
//! Every stage reads its upstream stages' artifacts from the output
//! directory, writes its own under `<output>/<stage>/`, and leaves a stamp in
//! `<output>/.stamps/<stage>.json` recording the hash of everything it read
//! and of everything it wrote. A stage whose inputs hash the same as in its
//! stamp, and whose outputs are untouched, is up-to-date and is skipped.

pub mod config;
pub mod stages;
pub mod stamp;

use std::fmt;
use std::path::Path;
use std::time::Instant;

pub use config::{Overrides, PipelineConfig};

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs the output of `{needs}`; run `idrkit run {needs}` first")]
    Upstream { stage: Stage, needs: Stage },
    #[error("stage `{stage}` failed: {source:#}")]
    Stage {
        stage: Stage,
        #[source]
        source: anyhow::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Upstream { .. } => 3,
            CliError::Stage { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Mine,
    Segment,
    Align,
    Prosody,
    Assemble,
    Split,
    Stats,
    Train,
    Eval,
    Compare,
    ReviewExport,
    ReviewImport,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Ingest,
        Stage::Mine,
        Stage::Segment,
        Stage::Align,
        Stage::Prosody,
        Stage::Assemble,
        Stage::Split,
        Stage::Stats,
        Stage::Train,
        Stage::Eval,
        Stage::Compare,
        Stage::ReviewExport,
        Stage::ReviewImport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Mine => "mine",
            Stage::Segment => "segment",
            Stage::Align => "align",
            Stage::Prosody => "prosody",
            Stage::Assemble => "assemble",
            Stage::Split => "split",
            Stage::Stats => "stats",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Compare => "compare",
            Stage::ReviewExport => "review-export",
            Stage::ReviewImport => "review-import",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Mine => &[Stage::Ingest],
            Stage::Segment => &[Stage::Ingest, Stage::Mine],
            Stage::Align => &[Stage::Ingest, Stage::Segment],
            Stage::Prosody => &[Stage::Align],
            Stage::Assemble => &[Stage::Mine, Stage::Segment, Stage::Align, Stage::Prosody],
            Stage::Split => &[Stage::Assemble],
            Stage::Stats => &[Stage::Split],
            Stage::Train => &[Stage::Split, Stage::Prosody],
            Stage::Eval => &[Stage::Split, Stage::Prosody, Stage::Train],
            Stage::Compare => &[Stage::Assemble],
            Stage::ReviewExport => &[Stage::Split, Stage::Align],
            Stage::ReviewImport => &[Stage::Split],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expands `all` and orders the request along the pipeline. `all` leaves out
/// `compare` and `review-import` when their inputs are not configured;
/// naming them explicitly does not.
pub fn plan(cfg: &PipelineConfig, requested: &[String]) -> Result<Vec<Stage>, CliError> {
    let mut out = Vec::new();
    for r in requested {
        if r == "all" {
            for s in Stage::ALL {
                if stages::precheck(cfg, s).is_ok() {
                    out.push(s);
                } else {
                    tracing::info!(stage = s.name(), event = "skipped", reason = "inputs not configured");
                }
            }
        } else {
            out.push(Stage::parse(r).ok_or_else(|| {
                let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
                CliError::Config(format!("unknown stage {r:?}; expected one of: all, {}", names.join(", ")))
            })?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// What a stage would do right now, for `--dry-run`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Planned {
    Run,
    UpToDate,
    /// Upstream will be produced earlier in the same invocation.
    RunAfterUpstream,
    Blocked(Stage),
}

pub fn dry_run(cfg: &PipelineConfig, stages: &[Stage], force: bool) -> Vec<(Stage, Planned)> {
    let out = &cfg.output;
    let mut will_run: Vec<Stage> = Vec::new();
    stages
        .iter()
        .map(|&s| {
            let pending = s.upstream().iter().any(|u| will_run.contains(u));
            let p = match s.upstream().iter().find(|u| !stamp::exists(out, **u) && !stages.contains(u)) {
                Some(&u) => Planned::Blocked(u),
                None if pending => Planned::RunAfterUpstream,
                None => match stamp::check(cfg, s) {
                    Ok(true) if !force => Planned::UpToDate,
                    _ => Planned::Run,
                },
            };
            if matches!(p, Planned::Run | Planned::RunAfterUpstream) {
                will_run.push(s);
            }
            (s, p)
        })
        .collect()
}

/// Runs `stages` in order, skipping the up-to-date ones unless `force`.
pub fn run(cfg: &PipelineConfig, stages: &[Stage], force: bool, mut on_done: impl FnMut(Stage, Outcome)) -> Result<(), CliError> {
    for &s in stages {
        let outcome = run_stage(cfg, s, force)?;
        on_done(s, outcome);
    }
    Ok(())
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<Outcome, CliError> {
    let out = &cfg.output;
    if let Some(&needs) = stage.upstream().iter().find(|u| !stamp::exists(out, **u)) {
        return Err(CliError::Upstream { stage, needs });
    }
    stages::precheck(cfg, stage)?;
    let fail = |source: anyhow::Error| CliError::Stage { stage, source };
    if !force && stamp::check(cfg, stage).map_err(fail)? {
        tracing::info!(stage = stage.name(), event = "up_to_date");
        return Ok(Outcome::UpToDate);
    }
    let t0 = Instant::now();
    tracing::info!(stage = stage.name(), event = "stage_start");
    let dir = out.join(stage.name());
    stamp::clear(out, stage).map_err(fail)?;
    std::fs::create_dir_all(&dir).map_err(|e| fail(e.into()))?;
    let input_hash = stamp::input_hash(cfg, stage).map_err(fail)?;
    let report = stages::execute(cfg, stage, &dir).map_err(fail)?;
    write_json(&dir.join("report.json"), &report).map_err(fail)?;
    stamp::write(out, stage, &input_hash).map_err(fail)?;
    tracing::info!(
        stage = stage.name(),
        event = "stage_done",
        elapsed_ms = t0.elapsed().as_millis() as u64,
        report = %serde_json::to_string(&report).unwrap_or_default()
    );
    Ok(Outcome::Ran)
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
