use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gomea-sr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn jsonl_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_record_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let o = run(&[
        "run", "--synthetic", "quartic", "--rows", "80", "--height", "2", "--budget", "1000", "--ls", "--seed", "7",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "summary");
    assert_eq!(last["evaluations"], 1000);
    assert!(last["test_r2"].is_number());
    assert!(String::from_utf8_lossy(&o.stderr).contains("test R2"));
}

#[test]
fn masked_adjusted_is_a_config_error() {
    let o = run(&["run", "--measure", "mi_masked", "--adjusted"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("masked"));
    let o = run(&["run", "--budget", "100", "--population", "32"]);
    assert!(!o.status.success());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "synthetic = quartic\nrows = 60\nheight = 2\nbudget = 640\nmeasure = mi\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--measure", "univariate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["config"]["measure"], "univariate");
    assert_eq!(first["config"]["budget"], "640");
}

#[test]
fn sweep_is_resumable_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            "--synthetic=quartic".into(),
            "--rows=60".into(),
            "--height=2".into(),
            "--budget=400".into(),
            "--measures=node,mi,random".into(),
            "--runs=0-1".into(),
            format!("--out={out}"),
        ]
    };
    let a = dir.path().join("a");
    let o = bin().args(args(a.to_str().unwrap())).env("GOMEA_SR_THREADS", "1").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = jsonl_files(&a);
    assert_eq!(files.len(), 6);

    // Remove one record; the rerun recomputes only that one.
    let victim = a.join(&files[2]);
    let before = fs::read(a.join(&files[0])).unwrap();
    fs::remove_file(&victim).unwrap();
    let o = bin().args(args(a.to_str().unwrap())).env("GOMEA_SR_THREADS", "1").output().unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("1 completed, 5 skipped"));
    assert!(victim.exists());
    assert_eq!(fs::read(a.join(&files[0])).unwrap(), before);

    let b = dir.path().join("b");
    let o = bin().args(args(b.to_str().unwrap())).env("GOMEA_SR_THREADS", "4").output().unwrap();
    assert!(o.status.success());
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let o = run(&["stats", a.to_str().unwrap(), "--resamples", "200", "--by-measure"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("dataset,measure,height"));
    assert_eq!(text.lines().filter(|l| l.starts_with("quartic,")).count(), 3);
}

#[test]
fn export_similarity_writes_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "export-similarity", "--synthetic", "quartic", "--rows", "60", "--height", "2", "--measure", "node",
        "--population", "16", "--generations", "5", "--runs", "0-1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mean0 = names.iter().find(|n| n.ends_with("__mean__g00.csv")).expect("mean at generation 0");
    let text = fs::read_to_string(dir.path().join(mean0)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "node,0,1,2,3,4,5,6");
    assert_eq!(lines.next().unwrap().split(',').nth(3).unwrap(), "0.8");
    assert_eq!(text.lines().count(), 8);
    let o = run(&["export-similarity", "--synthetic", "quartic", "--budget", "1000", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}
