use std::path::{Path, PathBuf};

use clap::Parser;
use mutachain_cli::{execute, Cli, CliError};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn exec(args: &[&str]) -> (Result<i32, CliError>, String) {
    let cli = Cli::try_parse_from(std::iter::once("mutachain").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let r = execute(cli, &mut out);
    (r, String::from_utf8(out).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fig2_report_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = exec(&["run", path(&scenario("fig2.scn")), "--out", path(dir.path())]);
    assert_eq!(code.unwrap(), 0);
    let golden = include_str!("golden/fig2.txt");
    assert_eq!(text, golden);
}

#[test]
fn fig2_stores_verify_and_lack_interval_one() {
    let dir = tempfile::tempdir().unwrap();
    exec(&["run", path(&scenario("fig2.scn")), "--out", path(dir.path())]).0.unwrap();
    for node in 0..3 {
        let store = dir.path().join(format!("node{node}"));
        assert!(!store.join("interval_1").exists());
        let (code, text) = exec(&["verify", path(&store)]);
        assert_eq!(code.unwrap(), 0, "{text}");
        assert!(text.contains("deleted intervals [1]"));
        let (_, text) = exec(&["inspect", path(&store), "--interval", "1"]);
        assert!(text.starts_with("I_1 deleted by"), "{text}");
        let (_, text) = exec(&["prune", path(&store)]);
        assert_eq!(text, "pruned []\n");
    }
}

#[test]
fn consent_queries() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let (code, text) = exec(&[
        "run",
        path(&scenario("consent.scn")),
        "--out",
        path(dir.path()),
        "--json-report",
        path(&json),
    ]);
    assert_eq!(code.unwrap(), 0);
    assert!(text.contains("Bob: 1 -> 3 -> 0 (current 0: nothing)"), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let info = report["consents"][0]["info"].as_str().unwrap().to_string();
    let bob = report["entities"]["Bob"].as_str().unwrap().to_string();
    let store = dir.path().join("node1");

    let (_, status) = exec(&["consent", "status", path(&store), "--info", &info, "--subject", &bob]);
    assert!(status.contains(&format!("{bob} value 0 (nothing)")), "{status}");
    let (_, audit) = exec(&["consent", "audit", path(&store), "--info", &info]);
    let values: Vec<&str> = audit.lines().skip(2).map(|l| l.rsplit(' ').next().unwrap()).collect();
    assert_eq!(values, vec!["1", "3", "0"]);
}

#[test]
fn fuzz_runs_are_reproducible() {
    let run = |dir: &Path| {
        exec(&[
            "run",
            path(&scenario("fuzz.scn")),
            "--seed",
            "7",
            "--steps",
            "50",
            "--out",
            path(dir),
            "--json-report",
            "-",
        ])
        .1
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path());
    assert_eq!(first, run(b.path()));
    // a rerun into the same directory replaces the stores
    assert_eq!(first, run(a.path()));
}

#[test]
fn script_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, "config nodes=2\n\nat 1 node 0 launch A\nrun 1\n").unwrap();
    let err = exec(&["run", path(&bad)]).0.unwrap_err();
    assert!(matches!(err, CliError::Script { line: 3, .. }), "{err}");
    assert!(err.to_string().contains("bad.scn:3:"));
}

#[test]
fn keygen_is_deterministic() {
    let (_, a) = exec(&["keygen", "--seed", "alice"]);
    let (_, b) = exec(&["keygen", "--seed", "alice"]);
    assert_eq!(a, b);
    let seed = a.lines().next().unwrap().strip_prefix("seed ").unwrap().to_string();
    let (_, c) = exec(&["keygen", "--seed", &seed]);
    assert_eq!(a, c);
}

#[test]
fn policy_and_depth_flags_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, text) = exec(&[
        "run",
        path(&scenario("fig2.scn")),
        "--policy",
        "unauthorized",
        "--confirm-depth",
        "5",
        "--lock",
        "2",
        "--out",
        path(dir.path()),
    ]);
    assert!(text.starts_with("run: nodes=3 seed=0 steps=4 confirm_depth=5 lock=2 policy=Unauthorized"));
    assert!(dir.path().join("node0/interval_1").exists());
}
