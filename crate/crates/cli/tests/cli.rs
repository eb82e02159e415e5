use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rmits(args: &[&str]) -> Output {
    rmits_env(args, &[])
}

fn rmits_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rmits"));
    cmd.args(args).env_remove("RMITS_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn demo_file(dir: &Path) -> PathBuf {
    let path = dir.join("demo.csv");
    let out = rmits(&["demo-data", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

#[test]
fn fit_reports_the_change_point_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let panel = demo_file(dir.path());
    let out = rmits(&[
        "fit",
        panel.to_str().unwrap(),
        "--window",
        "6,5",
        "--intervention",
        "2010-07",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("Estimated change point: t = 29 (2010-05)"),
        "{text}"
    );
    assert!(text.contains("lag -2"), "{text}");
}

#[test]
fn fit_writes_json_and_text_reports() {
    let dir = tempfile::tempdir().unwrap();
    let panel = demo_file(dir.path());
    let reports = dir.path().join("reports");
    let out = rmits(&[
        "fit",
        panel.to_str().unwrap(),
        "--candidates",
        "2010-01..2010-12",
        "--intervention",
        "31",
        "--format",
        "json",
        "--out",
        reports.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["tau_hat"]["index"], 29);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(reports.join("fit_report.json")).unwrap())
            .unwrap();
    assert_eq!(saved, json);
    assert!(fs::read_to_string(reports.join("fit_report.txt"))
        .unwrap()
        .contains("2010-05"));
}

#[test]
fn test_command_gives_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let panel = demo_file(dir.path());
    let out = rmits(&[
        "test",
        panel.to_str().unwrap(),
        "--window",
        "6,5",
        "--intervention",
        "2010-07",
        "--alpha",
        "0.05",
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["reject"], true);
    assert_eq!(json["per_q"].as_array().unwrap().len(), 12);
}

#[test]
fn input_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let panel = demo_file(dir.path());
    let p = panel.to_str().unwrap();

    let missing = rmits(&["fit", "/no/such/file.csv", "--candidates", "25..34"]);
    assert_eq!(missing.status.code(), Some(2));

    let edge = rmits(&["fit", p, "--candidates", "2..10"]);
    assert_eq!(edge.status.code(), Some(2));
    assert!(stderr(&edge).contains("q=2"), "{}", stderr(&edge));

    let no_anchor = rmits(&["fit", p, "--window", "3,3"]);
    assert_eq!(no_anchor.status.code(), Some(2));

    let both = rmits(&["fit", p, "--window", "3,3", "--candidates", "25..34"]);
    assert_eq!(both.status.code(), Some(2));

    let bad_alpha = rmits(&["test", p, "--candidates", "25..34", "--alpha", "1.5"]);
    assert_eq!(bad_alpha.status.code(), Some(2));

    let threads = rmits_env(
        &["fit", p, "--candidates", "25..34"],
        &[("RMITS_THREADS", "zero")],
    );
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn malformed_csv_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.csv");
    let mut body = String::from("time,a,b\n");
    for t in 1..=20 {
        if t == 7 {
            body.push_str("7,1.0,\n");
        } else {
            body.push_str(&format!("{t},{t}.5,{t}.25\n"));
        }
    }
    fs::write(&path, body).unwrap();
    let out = rmits(&["fit", path.to_str().unwrap(), "--candidates", "8..12"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 8") && err.contains("'b'"), "{err}");
}

#[test]
fn non_convergence_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let panel = demo_file(dir.path());
    let out = rmits(&[
        "fit",
        panel.to_str().unwrap(),
        "--candidates",
        "25..34",
        "--tol",
        "1e-15",
        "--max-iter",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("did not converge"));
}

#[test]
fn simulate_writes_preset_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = rmits(&[
        "simulate",
        "--preset",
        "table1",
        "--replicates",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("phi,T60_J1,T60_J3,T60_J5,T120_J1,T120_J3,T120_J5")
    );
    assert_eq!(lines.count(), 2);
    assert!(dir.path().join("table1_long.csv").exists());
}

#[test]
fn simulate_output_does_not_depend_on_worker_count() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = rmits_env(
            &[
                "simulate",
                "--preset",
                "figure4",
                "--regime",
                "T60_phi06",
                "--replicates",
                "4",
                "--out",
                dir.path().to_str().unwrap(),
            ],
            &[("RMITS_THREADS", threads)],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(dir.path().join("accuracy_T60_phi06.csv")).unwrap()
    };
    let one = run("1");
    assert_eq!(one, run("3"));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 30);
}

#[test]
fn unknown_regime_is_rejected() {
    let out = rmits(&["simulate", "--preset", "figure3", "--regime", "T90_phi01"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("T60_phi01"));
}

#[test]
fn demo_data_goes_to_stdout() {
    let out = rmits(&["demo-data"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("time,ward_a,ward_b,ward_c,ward_d,ward_e\n2008-01,"));
    assert_eq!(text.lines().count(), 61);
}
