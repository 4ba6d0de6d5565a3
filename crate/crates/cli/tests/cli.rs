use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use qmeter_cli::output::sha256_hex;

fn qmeter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmeter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qmeter-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn small_ensemble(out: &Path, workers: &str) -> Output {
    qmeter(&[
        "ensemble",
        "--preset",
        "fig2-free",
        "--override",
        "run.t_max=0.3",
        "--override",
        "n_traj=4",
        "--workers",
        workers,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn ensemble_output_is_independent_of_workers() {
    let a = scratch("w1");
    let b = scratch("w3");
    let ra = small_ensemble(&a, "1");
    let rb = small_ensemble(&b, "3");
    assert!(
        ra.status.success(),
        "{}",
        String::from_utf8_lossy(&ra.stderr)
    );
    assert!(rb.status.success());
    assert_eq!(ra.stdout, rb.stdout);
    for name in [
        "manifest.json",
        "report.json",
        "stats_x.csv",
        "stats_kx.csv",
        "trajectories.csv",
        "trajectories.jsonl",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let stderr = String::from_utf8_lossy(&ra.stderr);
    assert!(stderr.contains("override run.t_max = 0.3"), "{stderr}");
    assert!(stderr.contains("override n_traj = 4"), "{stderr}");
}

#[test]
fn files_carry_headers_and_manifest_hashes_match() {
    let dir = scratch("headers");
    assert!(small_ensemble(&dir, "2").status.success());
    let manifest: Value = serde_json::from_slice(&read(&dir, "manifest.json")).unwrap();
    assert_eq!(
        manifest["master_seed"],
        manifest["config"]["run"]["master_seed"]
    );
    assert_eq!(manifest["overrides"][1]["key"], "n_traj");
    let files = manifest["files"].as_object().unwrap();
    assert_eq!(files.len(), 5);
    for (name, hash) in files {
        assert_eq!(
            hash.as_str().unwrap(),
            sha256_hex(&read(&dir, name)),
            "{name}"
        );
    }

    let csv = String::from_utf8(read(&dir, "trajectories.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# qmeter ") && lines[0].contains("schema 1"));
    assert!(lines[1].starts_with("# config {"));
    assert_eq!(lines[2], "trajectory_id,t,x_m,k_n");
    let jsonl = String::from_utf8(read(&dir, "trajectories.jsonl")).unwrap();
    let recs: Vec<Value> = jsonl
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 4);
    let events: usize = recs
        .iter()
        .map(|r| r["events"].as_array().unwrap().len())
        .sum();
    assert_eq!(events, lines.len() - 3);
    let stats = String::from_utf8(read(&dir, "stats_x.csv")).unwrap();
    assert!(stats
        .lines()
        .any(|l| l == "t_bin_center,count,mean,std,stderr"));
    let report: Value = serde_json::from_slice(&read(&dir, "report.json")).unwrap();
    assert_eq!(report["_header"]["preset"], "fig2-free");
    assert_eq!(report["n_traj"], 4);
}

#[test]
fn seed_flag_changes_the_run() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    let run = |dir: &Path, seed: &str| {
        qmeter(&[
            "trajectory",
            "--preset",
            "fig2-free",
            "--seed",
            seed,
            "--override",
            "run.t_max=0.5",
            "--out",
            dir.to_str().unwrap(),
        ])
    };
    assert!(run(&a, "1").status.success());
    assert!(run(&b, "2").status.success());
    let ma: Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    assert_eq!(ma["master_seed"], 1);
    assert_ne!(read(&a, "trajectory.jsonl"), read(&b, "trajectory.jsonl"));
}

#[test]
fn two_detector_matches_closed_form() {
    let dir = scratch("two-detector");
    let out = qmeter(&["two-detector", "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(read(&dir, "two_detector.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("t,"));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-2);
}

#[test]
fn renewal_writes_intensity_tables() {
    let dir = scratch("renewal");
    let out = qmeter(&["renewal", "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let lt = report["lambda_horizon"].as_f64().unwrap();
    assert!((report["p_escape"].as_f64().unwrap() - (-lt).exp()).abs() < 1e-12);
    let lam = String::from_utf8(read(&dir, "intensities.csv")).unwrap();
    let cols: Vec<&str> = lam.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(cols[0], "t");
    assert!(cols.contains(&"lambda_0:1"));
    assert_eq!(&cols[cols.len() - 2..], ["lambda_total", "Lambda"]);
    let f = String::from_utf8(read(&dir, "f_t1.csv")).unwrap();
    assert_eq!(f.lines().nth(2), Some("t,f_T1"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"schema_version":1}"#).unwrap();
    let out = qmeter(&["scenario", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field `model`"));

    let out = qmeter(&["ensemble", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));

    let out = qmeter(&[
        "ensemble",
        "--preset",
        "fig2-free",
        "--override",
        "run.no_such_key=1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = qmeter(&[
        "ensemble",
        "--preset",
        "fig2-free",
        "--override",
        "run.t_max=-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn presets_are_listed() {
    let out = qmeter(&["presets"]);
    let names = String::from_utf8(out.stdout).unwrap();
    for p in ["fig1", "fig4", "fig7", "escape-sweep", "lindblad-check"] {
        assert!(names.lines().any(|l| l.starts_with(p)), "{p}");
    }
}

fn columns(dir: &Path, name: &str) -> String {
    let text = String::from_utf8(read(dir, name)).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next().unwrap().to_string()
}

fn run_ok(args: &[&str]) -> Value {
    let out = qmeter(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn filtering_records_have_no_momentum_label() {
    let dir = scratch("filtering");
    run_ok(&[
        "ensemble",
        "--preset",
        "fig2-free",
        "--override",
        "model=\"filtering\"",
        "--override",
        "run.t_max=1.5",
        "--override",
        "n_traj=3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(columns(&dir, "trajectories.csv"), "trajectory_id,t,x_m,k_n");
    assert_eq!(
        columns(&dir, "stats_x.csv"),
        "t_bin_center,count,mean,std,stderr"
    );
    let csv = String::from_utf8(read(&dir, "trajectories.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(3).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with(',')), "{rows:?}");
    let jsonl = String::from_utf8(read(&dir, "trajectories.jsonl")).unwrap();
    for line in jsonl.lines().filter(|l| !l.starts_with('#')) {
        let rec: Value = serde_json::from_str(line).unwrap();
        for ev in rec["events"].as_array().unwrap() {
            assert!(ev[2].is_null(), "{ev}");
        }
    }
}

#[test]
fn snapshots_dump_densities() {
    let dir = scratch("snapshots");
    let report = run_ok(&[
        "scenario",
        "--preset",
        "fig1",
        "--override",
        "pipeline.times=[0,0.2]",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(report["files"].as_array().unwrap().len(), 2);
    for name in ["density_t0.000.csv", "density_t0.200.csv"] {
        assert_eq!(columns(&dir, name), "x,y,density");
    }
}

#[test]
fn first_click_writes_histogram_and_density() {
    let dir = scratch("first-click");
    run_ok(&[
        "scenario",
        "--preset",
        "fig4",
        "--override",
        "n_traj=50",
        "--override",
        "pipeline.hist_t_max=1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(
        columns(&dir, "first_click_hist.csv"),
        "t_bin,detector_id,density"
    );
    assert_eq!(columns(&dir, "f_t1.csv"), "t,f_T1");
    assert!(columns(&dir, "intensities.csv").ends_with(",lambda_total,Lambda"));
    let hist = String::from_utf8(read(&dir, "first_click_hist.csv")).unwrap();
    assert!(hist.lines().any(|l| l.contains(",total,")));
}

#[test]
fn lindblad_check_writes_populations_and_densities() {
    let dir = scratch("lindblad");
    let report = run_ok(&[
        "lindblad-check",
        "--override",
        "pipeline.ensembles=[20]",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(report["rows"][0]["n_traj"], 20);
    assert_eq!(
        columns(&dir, "lindblad_populations.csv"),
        "t,detector_id,population"
    );
    assert_eq!(columns(&dir, "lindblad_density.csv"), "t,x,density");
    assert_eq!(columns(&dir, "lindblad_final.csv"), "x,lindblad,mcwf_20");
}
