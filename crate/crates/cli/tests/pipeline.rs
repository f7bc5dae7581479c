use std::path::{Path, PathBuf};
use std::process::Command;

use idrkit::segmenter::{ContextWindow, FixturePort, SegmentRequest, SegmentResponse};
use serde_json::Value;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn idrkit(dir: &Path, args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_idrkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = idrkit(dir.path(), &["make-fixture", "."]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    dir
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn sha(p: &Path) -> String {
    idrkit_cli::stamp::file_hash(p).unwrap()
}

fn lines_with(stdout: &str, suffix: &str) -> usize {
    stdout.lines().filter(|l| l.ends_with(suffix)).count()
}

#[test]
fn full_run_then_rerun_is_up_to_date() {
    let fx = fixture();
    let d = fx.path();
    let first = idrkit(d, &["run", "all"]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert_eq!(lines_with(&first.stdout, ": done"), 12, "{}", first.stdout);

    let mine = json(d.join("out/mine/report.json"));
    assert_eq!(mine["candidates"], 20);
    assert_eq!(mine["emitted"], 12);
    assert_eq!(mine["dropped_by_filter"], 8);
    for code in ["DUR_RATIO", "SRC_EXPLICIT", "NON_DISCOURSE_FILLER", "NON_DISCOURSE_INTENSIFIER", "DUP"] {
        assert!(mine["dropped_by"][code].as_u64().unwrap() > 0, "{code}");
    }
    for f in [
        "ingest/corpus.jsonl",
        "segment/segments.jsonl",
        "align/aligned.jsonl",
        "prosody/features.jsonl",
        "assemble/manifest.jsonl",
        "split/manifest.jsonl",
        "stats/stats.json",
        "stats/stats.txt",
        "train/fusion/best.ckpt",
        "train/fusion/history.csv",
        "train/baselines/tfidf-logreg.ckpt",
        "eval/metrics.json",
        "compare/gold_comparison.json",
        "review-export/session/session.jsonl",
    ] {
        assert!(d.join("out").join(f).is_file(), "{f}");
    }
    let cmp = json(d.join("out/compare/gold_comparison.json"));
    for k in ["matching", "new_inter", "intra_count"] {
        assert!(cmp.get(k).is_some(), "{k}");
    }

    // logs are one JSON object per line
    for l in first.stderr.lines() {
        let v: Value = serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}"));
        assert!(v["fields"]["event"].is_string(), "{l}");
    }

    let stamp_before = std::fs::read(d.join("out/.stamps/train.json")).unwrap();
    let mtime = std::fs::metadata(d.join("out/train/fusion/best.ckpt")).unwrap().modified().unwrap();
    let again = idrkit(d, &["run", "all"]);
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert_eq!(lines_with(&again.stdout, ": up-to-date"), 12, "{}", again.stdout);
    assert!(!again.stderr.contains("stage_start"));
    assert_eq!(std::fs::read(d.join("out/.stamps/train.json")).unwrap(), stamp_before);
    assert_eq!(std::fs::metadata(d.join("out/train/fusion/best.ckpt")).unwrap().modified().unwrap(), mtime);
}

#[test]
fn manifest_hash_is_stable_under_a_fixed_seed() {
    let fx = fixture();
    let d = fx.path();
    for out in ["a", "b"] {
        let o = idrkit(d, &["run", "split", "ingest", "mine", "segment", "align", "prosody", "assemble", "--output", out]);
        assert_eq!(o.code, 0, "{}", o.stderr);
    }
    assert_eq!(sha(&d.join("a/split/manifest.jsonl")), sha(&d.join("b/split/manifest.jsonl")));
    assert_eq!(
        json(d.join("a/split/report.json"))["provenance_hash"],
        json(d.join("b/split/report.json"))["provenance_hash"]
    );
}

#[test]
fn missing_upstream_names_the_stage_to_run() {
    let fx = fixture();
    let o = idrkit(fx.path(), &["run", "mine"]);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("idrkit run ingest"), "{}", o.stderr);
    let o = idrkit(fx.path(), &["run", "train"]);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("`split`"), "{}", o.stderr);
}

#[test]
fn config_errors_exit_2() {
    let fx = fixture();
    let d = fx.path();
    let base = std::fs::read_to_string(d.join("idrkit.toml")).unwrap();

    std::fs::write(d.join("bad.toml"), format!("{base}\n[split.en]\ntrain = 0.5\nvalidation = 0.2\ntest = 0.2\n")).unwrap();
    let o = idrkit(d, &["--config", "bad.toml", "run", "all"]);
    assert_eq!(o.code, 2, "{}", o.stderr);
    assert!(o.stderr.contains("split.en"), "{}", o.stderr);
    assert!(!d.join("out").exists());

    std::fs::write(d.join("typo.toml"), format!("{base}\nsede = 3\n")).unwrap();
    assert_eq!(idrkit(d, &["--config", "typo.toml", "run", "all"]).code, 2);

    std::fs::write(d.join("lm.toml"), base.replace("[train]", "[train]\nlambda_lm = 0.5")).unwrap();
    assert_eq!(idrkit(d, &["--config", "lm.toml", "run", "all"]).code, 2);

    assert_eq!(idrkit(d, &["--config", "nope.toml", "run", "all"]).code, 2);
    assert_eq!(idrkit(d, &["run", "frobnicate"]).code, 2);
}

#[test]
fn dry_run_prints_the_plan_and_touches_nothing() {
    let fx = fixture();
    let d = fx.path();
    let o = idrkit(d, &["run", "all", "--dry-run"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("ingest") && o.stdout.contains("run"));
    assert!(o.stdout.contains("run (after upstream)"));
    assert!(!d.join("out").exists());
    let o = idrkit(d, &["run", "eval", "--dry-run"]);
    assert!(o.stdout.contains("blocked: needs `split`"), "{}", o.stdout);
}

#[test]
fn touched_inputs_and_outputs_trigger_reruns() {
    let fx = fixture();
    let d = fx.path();
    let stages = ["run", "ingest", "mine", "segment"];
    assert_eq!(idrkit(d, &stages).code, 0);

    // hand-edited artifact: mine no longer matches its stamp, and segment
    // sees a changed upstream
    let p = d.join("out/mine/instances.jsonl");
    let text = std::fs::read_to_string(&p).unwrap();
    std::fs::write(&p, text.lines().skip(1).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let o = idrkit(d, &stages);
    assert!(o.stdout.contains("ingest: up-to-date"), "{}", o.stdout);
    assert!(o.stdout.contains("mine: done"), "{}", o.stdout);
    assert_eq!(std::fs::read_to_string(&p).unwrap(), text);

    // changed lexicon: mine reruns, and drops the connective's hits
    let lex = d.join("corpus/lexicons/fr.tsv");
    let l = std::fs::read_to_string(&lex).unwrap();
    std::fs::write(&lex, l.lines().filter(|r| !r.starts_with("donc")).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let o = idrkit(d, &stages);
    assert!(o.stdout.contains("mine: done") && o.stdout.contains("segment: done"), "{}", o.stdout);
    assert!(json(d.join("out/mine/report.json"))["emitted"].as_u64().unwrap() < 12);

    let o = idrkit(d, &["run", "mine", "--force"]);
    assert!(o.stdout.contains("mine: done"));
}

#[test]
fn broken_audio_is_a_stage_failure() {
    let fx = fixture();
    let d = fx.path();
    std::fs::write(d.join("corpus/audio/talk02.wav"), b"RIFF nonsense").unwrap();
    let o = idrkit(d, &["run", "ingest"]);
    assert_eq!(o.code, 4, "{}", o.stderr);
    assert!(o.stderr.contains("talk02"), "{}", o.stderr);
    assert!(!d.join("out/.stamps/ingest.json").exists());
}

#[test]
fn recorded_segmenter_responses_are_used_and_checked() {
    let fx = fixture();
    let d = fx.path();
    let pre = ["run", "ingest", "mine", "segment"];
    assert_eq!(idrkit(d, &pre).code, 0);
    let segs: Vec<Value> = std::fs::read_to_string(d.join("out/segment/segments.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(segs.iter().all(|s| s["spans"]["source"] == "fallback"));

    // first instance gets a bogus answer, the rest a shortened arg2
    let mut port = FixturePort::default();
    for (i, s) in segs.iter().enumerate() {
        let ctx: ContextWindow = serde_json::from_value(s["context"].clone()).unwrap();
        let arg2 = s["arg2_text"].as_str().unwrap();
        let short: Vec<&str> = arg2.split(' ').collect();
        let resp = SegmentResponse {
            arg1_text: if i == 0 { "not in the context at all".into() } else { s["arg1_text"].as_str().unwrap().into() },
            arg2_text: short[..short.len() - 1].join(" "),
        };
        port.insert(&SegmentRequest::for_context(&ctx, false), resp);
    }
    std::fs::write(d.join("recorded.jsonl"), port.to_jsonl()).unwrap();
    let o = idrkit(d, &["run", "segment", "--segmenter-fixture", "recorded.jsonl"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("segment: done"));
    let rep = json(d.join("out/segment/report.json"));
    assert_eq!(rep["external"].as_u64().unwrap(), segs.len() as u64 - 1);
    assert_eq!(rep["fallback"], 1);
}

#[test]
fn verdicts_become_a_release_filter() {
    let fx = fixture();
    let d = fx.path();
    assert_eq!(idrkit(d, &["run", "all"]).code, 0);
    let ids: Vec<String> = std::fs::read_to_string(d.join("out/split/manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["instance_id"].as_str().unwrap().to_string())
        .collect();
    let v = |id: &str, decision: &str, extra: &str, who: &str| {
        format!(r#"{{"instance_id":"{id}","decision":"{decision}"{extra},"reviewer_id":"{who}","timestamp":"2026-01-01T00:00:00Z"}}"#)
    };
    let verdicts = [
        v(&ids[0], "reject", r#","error_class":"not_implicit""#, "r1"),
        v(&ids[1], "accept", "", "r1"),
        v(&ids[2], "accept", "", "r1"),
        v(&ids[2], "reject", r#","error_class":"early_cut""#, "r2"),
    ]
    .join("\n");
    std::fs::write(d.join("verdicts.jsonl"), verdicts + "\n").unwrap();
    let o = idrkit(d, &["run", "review-import", "--verdicts", "verdicts.jsonl"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let rep = json(d.join("out/review-import/report.json"));
    assert_eq!(rep["released"], 10);
    assert_eq!(rep["reviewed"]["needs_adjudication"], 1);
    let release = std::fs::read_to_string(d.join("out/review-import/release/manifest.jsonl")).unwrap();
    assert!(!release.contains(&ids[0]) && !release.contains(&ids[2]) && release.contains(&ids[1]));

    std::fs::write(d.join("stray.jsonl"), v("nobody", "accept", "", "r1") + "\n").unwrap();
    let o = idrkit(d, &["run", "review-import", "--verdicts", "stray.jsonl"]);
    assert_eq!(o.code, 4, "{}", o.stderr);
    let o = idrkit(d, &["run", "review-import", "--verdicts", "absent.jsonl"]);
    assert_eq!(o.code, 2, "{}", o.stderr);
}
