use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hjbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjbd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pm_estimate_near_threshold() {
    let o = hjbd(&[
        "pm-estimate",
        "--prior",
        r#"{"kind":"WeightedL1","lambda":[2]}"#,
        "--x",
        "5",
        "--t",
        "1.25",
        "--eps",
        "0.025",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!((v["u_pm"][0].as_f64().unwrap() - 2.5).abs() < 1e-3);
    for key in ["mse", "s_eps", "w_eps"] {
        assert!(v[key].is_number(), "{key}");
    }
}

#[test]
fn pm_estimate_tikhonov_matches_closed_form() {
    let o = hjbd(&["pm-estimate", "--prior", r#"{"kind":"Quadratic","m":1}"#, "--x", "-3,1", "--t", "1", "--eps", "2"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["u_pm"][0].as_f64().unwrap(), -1.5);
    assert_eq!(v["u_pm"][1].as_f64().unwrap(), 0.5);
    assert!((v["mse"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn map_estimate_soft_threshold() {
    let o =
        hjbd(&["map-estimate", "--prior", r#"{"kind":"WeightedL1","lambda":[2, 1]}"#, "--x", "-5,0.5", "--t", "1.25"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["u_map"][0].as_f64().unwrap(), -2.5);
    assert_eq!(v["u_map"][1].as_f64().unwrap(), 0.0);
}

#[test]
fn validation_errors_exit_with_one() {
    let cases: &[&[&str]] = &[
        &["pm-estimate", "--prior", r#"{"kind":"Nope"}"#, "--x", "1", "--t", "1", "--eps", "1"],
        &["pm-estimate", "--prior", r#"{"kind":"Zero"}"#, "--x", "1", "--t", "-1", "--eps", "1"],
        &["pm-estimate", "--prior", r#"{"kind":"Zero"}"#, "--x", "1", "--t", "1", "--eps", "0"],
        &["pm-estimate", "--prior", r#"{"kind":"Zero","dim":2}"#, "--x", "1", "--t", "1", "--eps", "1"],
        &["map-estimate", "--prior", r#"{"kind":"Zero"}"#, "--x", "1", "--t", "1", "--unknown", "3"],
        &["denoise-map", "/nonexistent/in.pgm", "/tmp/out.pgm", "--t", "1", "--lambda", "1"],
        &["verify", "--suite", "everything"],
        &["no-such-command"],
    ];
    for args in cases {
        let o = hjbd(args);
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(code(&hjbd(&["--help"])), 0);
}

#[test]
fn thread_cap_is_validated() {
    let run = |val: &str| {
        Command::new(env!("CARGO_BIN_EXE_hjbd"))
            .args(["example", "--t", "1"])
            .env("HJBD_THREADS", val)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("1")), 0);
    assert_eq!(code(&run("0")), 1);
    assert_eq!(code(&run("many")), 1);
}

#[test]
fn example_prints_both_tables() {
    let o = hjbd(&["example", "--t", "1.25", "--eps", "0.5", "--x", "-5,0,5"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Tikhonov") && text.contains("soft thresholding"));
    // x = 5, m = 1, t = 1.25: u = 5/2.25
    assert!(text.contains("2.222222"));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("5.0000")).count(), 2);
}

#[test]
fn map_pipeline_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (noisy, map, rep) = (dir.path().join("noisy.pgm"), dir.path().join("map.pgm"), dir.path().join("map.json"));
    assert_eq!(code(&hjbd(&["noise", "phantom:32x24", p(&noisy), "--sigma", "20", "--seed", "4"])), 0);
    let o = hjbd(&["denoise-map", p(&noisy), p(&map), "--t", "20", "--lambda", "1", "--report", p(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_json(&rep)["converged"].as_bool().unwrap());
    let m = hjbd(&["metrics", p(&map), p(&noisy)]);
    assert_eq!(code(&m), 0);
    let v = stdout_json(&m);
    assert!(v["psnr"].as_f64().unwrap() > 10.0);
    assert!(v["plateau_fraction"].as_f64().unwrap() > v["reference_plateau_fraction"].as_f64().unwrap());
    assert_eq!(stdout_json(&hjbd(&["metrics", p(&map), p(&map)]))["psnr"], "inf");

    // same seed, same bytes
    let again = dir.path().join("noisy2.pgm");
    hjbd(&["noise", "phantom:32x24", p(&again), "--sigma", "20", "--seed", "4"]);
    assert_eq!(std::fs::read(&noisy).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn solver_non_convergence_exits_with_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let (noisy, map, rep) = (dir.path().join("n.pgm"), dir.path().join("m.pgm"), dir.path().join("r.json"));
    hjbd(&["noise", "phantom:16x16", p(&noisy), "--sigma", "20"]);
    let o = hjbd(&[
        "denoise-map",
        p(&noisy),
        p(&map),
        "--t",
        "20",
        "--lambda",
        "1",
        "--max-iter",
        "3",
        "--report",
        p(&rep),
    ]);
    assert_eq!(code(&o), 2);
    assert!(map.exists());
    assert!(!read_json(&rep)["converged"].as_bool().unwrap());
}

#[test]
fn pm_denoising_is_deterministic_and_metrics_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clean = d.join("clean.pgm");
    let noisy = d.join("noisy.pgm");
    hjbd(&["noise", "phantom:16x12", p(&clean), "--sigma", "0"]);
    hjbd(&["noise", p(&clean), p(&noisy), "--sigma", "20", "--seed", "9"]);
    let run = |out: &Path, rep: &Path| {
        hjbd(&[
            "denoise-pm",
            p(&noisy),
            p(out),
            "--t",
            "20",
            "--eps",
            "20",
            "--lambda",
            "1",
            "--sweeps",
            "600",
            "--burn-in",
            "100",
            "--seed",
            "3",
            "--chains",
            "2",
            "--reference",
            p(&clean),
            "--report",
            p(rep),
        ])
    };
    let (out1, rep1, out2, rep2) = (d.join("pm1.pgm"), d.join("r1.json"), d.join("pm2.pgm"), d.join("r2.json"));
    let o = run(&out1, &rep1);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&out2, &rep2)), 0);
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    assert_eq!(read_json(&rep1), read_json(&rep2));

    let report = read_json(&rep1);
    let m = stdout_json(&hjbd(&["metrics", p(&out1), p(&clean)]));
    assert_eq!(m["psnr"], report["psnr_vs_reference"]);
    assert_eq!(m["plateau_fraction"], report["plateau_fraction"]);
    let m = stdout_json(&hjbd(&["metrics", p(&out1), p(&noisy)]));
    assert_eq!(m["psnr"], report["psnr_vs_input"]);

    let bad = hjbd(&[
        "denoise-pm",
        p(&noisy),
        p(&out1),
        "--t",
        "20",
        "--eps",
        "20",
        "--lambda",
        "1",
        "--sweeps",
        "10",
        "--burn-in",
        "20",
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn verify_core_suite_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = hjbd(&["verify", "--suite", "core", "--seed", "7", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = read_json(&out);
    assert_eq!(v["seed"], 7);
    assert!(v["timestamp"].is_string());
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.len() > 10);
    assert!(checks.iter().all(|c| c["passed"] == true));
    for key in ["name", "observed", "bound_or_target", "tolerance", "details"] {
        assert!(checks[0].get(key).is_some(), "{key}");
    }
}
