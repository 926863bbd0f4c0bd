mod common;

use std::fs;
use std::path::Path;

use common::{run_tuni, small_target, tuni};

const FAST: [&str; 8] = [
    "--epochs",
    "4",
    "--iterations",
    "20",
    "--gibberish",
    "12",
    "--ae-epochs",
    "200",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "full-pipeline",
        "--target",
        s(small_target()),
        "--out",
        s(out),
    ];
    args.extend(FAST);
    args.extend(extra);
    run_tuni(&args, 0)
}

#[test]
fn help_lists_the_documented_defaults() {
    let out = run_tuni(&["full-pipeline", "--help"], 0);
    let help = String::from_utf8(out.stdout).unwrap();
    for d in [
        "[default: 100]",
        "[default: 1000]",
        "[default: 0.02]",
        "[default: 50]",
        "[default: 3]",
        "[default: 4]",
    ] {
        assert!(help.contains(d), "missing {d} in\n{help}");
    }
}

#[test]
fn odd_identity_count_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_tuni(
        &["train-target", "--identities", "7", "--out", s(dir.path())],
        2,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("--identities"));
}

#[test]
fn unknown_flags_exit_with_usage_code() {
    run_tuni(&["extract", "--no-such-flag"], 2);
}

#[test]
fn gen_gibberish_writes_one_text_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.txt");
    run_tuni(&["gen-gibberish", "--out", s(&path)], 0);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 50);
    assert!(lines.iter().all(|l| l.chars().count() == 10));
}

#[test]
fn missing_backend_exits_with_backend_code() {
    let dir = tempfile::tempdir().unwrap();
    let texts = dir.path().join("t.txt");
    fs::write(&texts, "Ada\n").unwrap();
    let out = run_tuni(
        &[
            "extract",
            "--backend",
            "synthetic:/nonexistent/b.bin",
            "--texts",
            s(&texts),
            "--out",
            s(&dir.path().join("f.csv")),
        ],
        3,
    );
    assert!(!out.stderr.is_empty());
}

#[test]
fn staged_commands_match_the_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let target = small_target();
    let backend = target.join("backend.bin");
    let full = d.join("full");
    pipeline(&full, &["--seed", "5"]);

    let opt = ["--epochs", "4", "--iterations", "20"];
    let (gib_texts, texts) = (full.join("gibberish.txt"), target.join("texts.txt"));
    let gib_feats = d.join("gf.csv");
    let mut args = vec![
        "extract",
        "--seed",
        "5",
        "--backend",
        s(&backend),
        "--texts",
        s(&gib_texts),
        "--out",
        s(&gib_feats),
    ];
    args.extend(opt);
    run_tuni(&args, 0);
    let feats = d.join("f.csv");
    let mut args = vec![
        "extract",
        "--seed",
        "5",
        "--backend",
        s(&backend),
        "--texts",
        s(&texts),
        "--out",
        s(&feats),
    ];
    args.extend(opt);
    run_tuni(&args, 0);
    let ens = d.join("e.bin");
    run_tuni(
        &[
            "fit",
            "--seed",
            "5",
            "--features",
            s(&gib_feats),
            "--out",
            s(&ens),
            "--ae-epochs",
            "200",
        ],
        0,
    );
    let votes = d.join("votes.csv");
    run_tuni(
        &[
            "infer",
            "--ensemble",
            s(&ens),
            "--features",
            s(&feats),
            "--out",
            s(&votes),
        ],
        0,
    );
    assert_eq!(
        fs::read(&votes).unwrap(),
        fs::read(full.join("votes.csv")).unwrap()
    );

    // evaluate recomputes the report's metrics from the votes file
    let out = run_tuni(
        &[
            "evaluate",
            "--votes",
            s(&votes),
            "--truth",
            s(&target.join("truth.csv")),
        ],
        0,
    );
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(full.join("report.json")).unwrap()).unwrap();
    assert_eq!(metrics, report["text_only"]);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, &["--workers", "1"]);
    pipeline(&b, &["--workers", "3"]);
    for f in [
        "report.json",
        "votes.csv",
        "features.csv",
        "gibberish_features.csv",
        "ensemble.bin",
        "run.toml",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    run_tuni(&["gen-gibberish", "--seed", "42", "--out", s(&a)], 0);
    let out = tuni()
        .env(tuni::config::SEED_ENV, "42")
        .args(["gen-gibberish", "--out", s(&b)])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("TUNI_SEED"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let bad = tuni()
        .env(tuni::config::SEED_ENV, "soon")
        .args(["gen-gibberish", "--out", s(&b)])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_seed_yields_to_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 9\n[gibberish]\ncount = 7\n").unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    run_tuni(&["--config", s(&cfg), "gen-gibberish", "--out", s(&a)], 0);
    run_tuni(
        &[
            "gen-gibberish",
            "--seed",
            "9",
            "--count",
            "7",
            "--out",
            s(&b),
        ],
        0,
    );
    run_tuni(
        &[
            "--config",
            s(&cfg),
            "gen-gibberish",
            "--seed",
            "1",
            "--out",
            s(&c),
        ],
        0,
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 7);
}

#[test]
fn resume_after_interruption_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    pipeline(&out, &[]);
    let report = fs::read(out.join("report.json")).unwrap();
    // simulate a crash halfway through writing the feature file
    let feats = fs::read(out.join("features.csv")).unwrap();
    fs::write(out.join("features.csv"), &feats[..feats.len() / 2]).unwrap();
    fs::remove_file(out.join("report.json")).unwrap();
    pipeline(&out, &["--resume"]);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), report);

    // changed settings cannot be resumed into the same directory
    let mut args = vec![
        "full-pipeline",
        "--target",
        s(small_target()),
        "--out",
        s(&out),
        "--resume",
    ];
    args.extend(FAST);
    args.extend(["--seed", "77"]);
    run_tuni(&args, 2);
}

#[test]
fn spsa_mode_runs_without_gradients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    pipeline(&out, &["--mode", "spsa", "--spsa-samples", "2"]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["settings"]["optimization"]["mode"], "spsa");
}

#[test]
fn enhanced_pipeline_writes_cluster_votes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    pipeline(&out, &["--photos", "2"]);
    let votes = fs::read_to_string(out.join("votes_enhanced.csv")).unwrap();
    assert_eq!(votes.lines().count(), 21);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["enhanced"].is_object());
}

#[test]
fn sweep_writes_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep",
        "--target",
        s(small_target()),
        "--param",
        "N",
        "--grid",
        "2,3",
        "--repeats",
        "1",
        "--out",
        s(&table),
    ];
    args.extend(FAST);
    run_tuni(&args, 0);
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 3);
}
