use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn learnff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_learnff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_single_cell_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("res");
    let o = learnff(&[
        "run",
        "--config",
        &cfg,
        "--only",
        "A:FF5",
        "--feedback",
        "off",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "set,feedback,strategy,max_abs_err_peraxis,max_abs_err_norm,run_index"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("A,off,FF5,"), "{row}");
    assert!(row.ends_with(",3"));
    assert!(lines.next().is_none());
    assert!(!out.join("failures.csv").exists());
    for run in 1..=3 {
        assert!(out.join(format!("logs/A_fb-off_FF5_run{run}.csv")).exists());
    }
    assert!(out.join("models/A_fb-off_FF5.model").exists());
    assert!(out.join("errors/A_fb-off.csv").exists());

    let t = learnff(&["table", "--out", out.to_str().unwrap()]);
    assert!(t.status.success());
    let text = String::from_utf8(t.stdout).unwrap();
    assert!(text.contains("FF5") && text.contains("feedback off"), "{text}");
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "runs_per_config = 2\n[sim]\nkd_att = -3.0\n");
    let o = learnff(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn bad_only_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = learnff(&["run", "--config", &cfg, "--only", "A-FF5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = learnff(&["run", "--config", &cfg, "--only", "E:FF5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_cell_sets_exit_code() {
    // A 0.5 s reference at dt = 0.3 cannot be stepped; every cell fails.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sim]\ndt = 0.3\n[trajectory]\nduration = 0.5\n");
    let out = dir.path().join("res");
    let o = learnff(&[
        "run",
        "--config",
        &cfg,
        "--only",
        "C:FF1",
        "--feedback",
        "on",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.lines().nth(1).unwrap().starts_with("C,on,FF1,"));
    let t = learnff(&["table", "--out", out.to_str().unwrap()]);
    assert_eq!(t.status.code(), Some(1));
}

#[test]
fn traj_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref.csv");
    let o = learnff(&["traj", "--step", "0.01", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 101);
}

#[test]
fn table_without_summary_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = learnff(&["table", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
