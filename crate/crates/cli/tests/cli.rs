use std::path::Path;
use std::process::{Command, Output};

fn rap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rap"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn simulate(dir: &Path) {
    ok(rap(
        dir,
        &["simulate", "--dgp", "scenario1", "--n", "30000", "--q", "10", "--seed", "3"],
    ));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn data_flags(dir: &Path) -> Vec<String> {
    [
        "--input",
        &dir.join("encounters.csv").display().to_string(),
        "--residential",
        &dir.join("residential.csv").display().to_string(),
        "--categorical",
        "x",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn help_lists_commands_and_flags() {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_rap")).arg("--help").output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    for c in ["simulate", "crr", "rap", "bounds", "sens-contour", "benchmark", "study", "sweep"] {
        assert!(text.contains(c), "{c} missing from help");
    }
    for f in ["--config", "--threads", "--out", "--seed"] {
        assert!(text.contains(f), "{f} missing from help");
    }
    let out = ok(Command::new(env!("CARGO_BIN_EXE_rap")).args(["rap", "--help"]).output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    for f in [
        "--grid",
        "--r0",
        "--density",
        "--race-factor",
        "--bandwidth",
        "--bootstrap",
        "--variants",
    ] {
        assert!(text.contains(f), "{f} missing from rap help");
    }
}

#[test]
fn unknown_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rap(dir.path(), &["crr", "--no-such-flag"]);
    assert!(!out.status.success());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"command": "study", "n": "many"}"#).unwrap();
    let out = rap(dir.path(), &["study", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`n`"));

    std::fs::write(&cfg, r#"{"reps": 2, "typo": 1}"#).unwrap();
    let out = rap(dir.path(), &["study", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
}

#[test]
fn study_writes_one_row_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    ok(rap(
        dir.path(),
        &["study", "--scenario", "1", "--reps", "5", "--n", "20000", "--seed", "7"],
    ));
    let text = read(dir.path(), "study_replicates.csv");
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("replicate,seed,psi_percent_bias"));
    assert_eq!(lines.count(), 5);
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "study.meta.json")).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["config"]["reps"], 5);
}

#[test]
fn rap_curve_is_one_at_reference() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let mut args = vec!["rap".to_string()];
    args.extend(data_flags(dir.path()));
    args.extend(["--grid", "0.4,0.5,0.6"].map(String::from));
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    ok(rap(dir.path(), &refs));
    let text = read(dir.path(), "rap.csv");
    let row = text.lines().find(|l| l.starts_with("0.6,")).unwrap();
    assert_eq!(row.split(',').nth(1), Some("1"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"command": "simulate", "n": 500, "q": 3, "dgp": "scenario2"}"#).unwrap();
    ok(rap(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--q", "4"]));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "simulate.meta.json")).unwrap();
    assert_eq!(meta["config"]["n"], 500);
    assert_eq!(meta["config"]["q"], 4);
    assert_eq!(read(dir.path(), "residential.csv").lines().count(), 5);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(a.path(), "1"), (b.path(), "3")] {
        simulate(dir);
        let mut args = vec![
            "crr".to_string(),
            "--bootstrap".into(),
            "20".into(),
            "--variants".into(),
            "census,naive".into(),
        ];
        args.extend(data_flags(dir));
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let out = Command::new(env!("CARGO_BIN_EXE_rap"))
            .args(&refs)
            .arg("--out")
            .arg(dir)
            .env("RAP_THREADS", threads)
            .output()
            .unwrap();
        ok(out);
    }
    for name in ["encounters.csv", "truth.csv", "crr.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
    let strip = |s: String| {
        s.replace(&a.path().display().to_string(), "")
            .replace(&b.path().display().to_string(), "")
    };
    assert_eq!(strip(read(a.path(), "crr.meta.json")), strip(read(b.path(), "crr.meta.json")));
}
