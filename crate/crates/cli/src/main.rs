use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idrkit::fixture::PlantedCorpus;
use idrkit_cli::{dry_run, plan, run, CliError, Outcome, Overrides, PipelineConfig, Planned};
use tracing_subscriber::EnvFilter;

/// Mine, align and package implicit discourse relations from subtitled talks.
#[derive(Debug, Parser)]
#[command(name = "idrkit", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "idrkit.toml")]
    config: PathBuf,
    /// Output directory; overrides `output`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for splitting, sampling and training; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recorded segmenter responses; overrides `segmenter.fixture`.
    #[arg(long, global = true)]
    segmenter_fixture: Option<PathBuf>,
    /// Gold relations for `compare`; overrides `gold`.
    #[arg(long, global = true)]
    gold: Option<PathBuf>,
    /// Reviewer verdicts for `review-import`; overrides `review.verdicts`.
    #[arg(long, global = true)]
    verdicts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run stages in pipeline order. `all` runs every stage.
    Run {
        #[arg(required = true, value_name = "STAGE")]
        stages: Vec<String>,
        /// Print what would run and stop.
        #[arg(long)]
        dry_run: bool,
        /// Rerun even when up-to-date.
        #[arg(long)]
        force: bool,
    },
    /// Write a small synthetic corpus and a config that runs on it.
    MakeFixture { dir: PathBuf },
}

const FIXTURE_CONFIG: &str = r#"output = "out"
seed = 7
gold = "corpus/gold.jsonl"

[corpus]
root = "corpus"

[lexicons]
en = "corpus/lexicons/en.tsv"
fr = "corpus/lexicons/fr.tsv"
de = "corpus/lexicons/de.tsv"

[pairs]
en = ["fr", "de"]

[model]
d = 16
proj_dim = 16
attn_heads = 2
conv1_channels = 8
conv2_channels = 8

[train]
lr_heads = 0.01
lr_stats_head = 0.01
grad_accum = 2
epochs = 7

[review]
sample = 12
"#;

fn make_fixture(dir: &std::path::Path) -> Result<(), CliError> {
    let fail = |e: String| CliError::Config(format!("{}: {e}", dir.display()));
    PlantedCorpus::generate().write_to(&dir.join("corpus")).map_err(|e| fail(e.to_string()))?;
    std::fs::write(dir.join("idrkit.toml"), FIXTURE_CONFIG).map_err(|e| fail(e.to_string()))?;
    println!("wrote {}", dir.join("idrkit.toml").display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let (stages, dry, force) = match cli.command {
        Command::MakeFixture { dir } => return make_fixture(&dir),
        Command::Run { stages, dry_run, force } => (stages, dry_run, force),
    };
    let overrides = Overrides {
        output: cli.output,
        seed: cli.seed,
        segmenter_fixture: cli.segmenter_fixture,
        verdicts: cli.verdicts,
        gold: cli.gold,
    };
    let cfg = PipelineConfig::load(&cli.config, &overrides)?;
    let stages = plan(&cfg, &stages)?;
    if dry {
        println!("plan for {} (output {}):", cli.config.display(), cfg.output.display());
        for (s, p) in dry_run(&cfg, &stages, force) {
            let what = match p {
                Planned::Run => "run".to_string(),
                Planned::UpToDate => "up-to-date".to_string(),
                Planned::RunAfterUpstream => "run (after upstream)".to_string(),
                Planned::Blocked(u) => format!("blocked: needs `{u}`"),
            };
            println!("  {:<14} {what}", s.name());
        }
        return Ok(());
    }
    run(&cfg, &stages, force, |s, outcome| match outcome {
        Outcome::Ran => println!("{s}: done"),
        Outcome::UpToDate => println!("{s}: up-to-date"),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("IDRKIT_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(event = "error", exit_code = e.exit_code(), message = %e);
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
