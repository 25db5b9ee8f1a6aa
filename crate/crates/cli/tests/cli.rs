use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn vps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vps"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn vps")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn offline_golden_run_exits_zero_and_writes_reports() {
    let out = tempfile::tempdir().unwrap();
    let case = fixture("ID115");
    let o = vps(&[
        "run",
        "--case",
        s(&case),
        "--offline",
        "--output",
        s(out.path()),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.starts_with("ID115: stage=reported human_review=false"),
        "{stdout}"
    );
    let dir = out.path().join("ID115");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["case_id"], "ID115");
    assert_eq!(json["human_review_required"], false);
    assert!(dir.join("report.md").is_file());
    assert!(
        !case.join("report.json").exists(),
        "fixture dir must stay clean"
    );
}

#[test]
fn failure_case_exits_two_and_lists_reasons() {
    let out = tempfile::tempdir().unwrap();
    let o = vps(&[
        "run",
        "--case",
        s(&fixture("refusal-case")),
        "--offline",
        "--output",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("human_review=true"));
    assert!(
        stdout.contains("review: decode failure: broken.mp4"),
        "{stdout}"
    );
    assert!(stdout.contains("refused"), "{stdout}");
}

#[test]
fn usage_and_fatal_errors_exit_one() {
    assert_eq!(vps(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vps(&["run"]).status.code(), Some(1), "--case is required");
    assert_eq!(vps(&["--help"]).status.code(), Some(0));
    let o = vps(&["run", "--case", "/nonexistent/case", "--offline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn bad_config_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"search_k": 0}"#).unwrap();
    let o = vps(&[
        "run",
        "--case",
        s(&fixture("ID115")),
        "--config",
        s(&cfg),
        "--offline",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("search_k"));
    std::fs::write(&cfg, "{not json").unwrap();
    let o = vps(&[
        "run",
        "--case",
        s(&fixture("ID115")),
        "--config",
        s(&cfg),
        "--offline",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_sets_output_and_offline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({ "offline": true, "output_dir": out }).to_string(),
    )
    .unwrap();
    let o = vps(&[
        "evidence",
        "--case",
        s(&fixture("ID115")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("ID115/evidence.json").is_file());
    assert!(!out.join("ID115/report.json").exists());
}

#[test]
fn staged_subcommands_then_report() {
    let out = tempfile::tempdir().unwrap();
    let case = fixture("ID115");
    let common = ["--case", s(&case), "--offline", "--output", s(out.path())];
    let run = |sub: &str| {
        let mut a = vec![sub];
        a.extend(common);
        vps(&a)
    };
    let o = run("keyframes");
    assert_eq!(o.status.code(), Some(0));
    let dir = out.path().join("ID115");
    assert!(dir.join("keyframes.json").is_file());
    assert!(dir.join("transcripts.json").is_file());
    assert!(!dir.join("evidence.json").exists());
    assert_eq!(run("evidence").status.code(), Some(0));
    assert!(dir.join("evidence.json").is_file());
    let o = run("report");
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("stage=reported"));
    let md = std::fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(md.contains("## Step 2: Keyframes"));
}

#[test]
fn several_cases_with_jobs() {
    let out = tempfile::tempdir().unwrap();
    let o = vps(&[
        "run",
        "--case",
        s(&fixture("ID115")),
        "--case",
        s(&fixture("refusal-case")),
        "--jobs",
        "2",
        "--offline",
        "--output",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "review outranks success");
    let stdout = String::from_utf8_lossy(&o.stdout);
    let first = stdout.lines().next().unwrap();
    assert!(
        first.starts_with("ID115:"),
        "output keeps argument order: {stdout}"
    );
    assert!(out.path().join("refusal-case/report.json").is_file());
}
