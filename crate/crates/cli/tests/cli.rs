use std::path::Path;
use std::process::{Command, Output};

fn daaria(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daaria"))
        .args(args)
        .current_dir(dir)
        .env_remove("DAARIA_CONFIG")
        .output()
        .expect("spawn daaria")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (out, seed) in [("a.jsonl", "5"), ("b.jsonl", "5"), ("c.jsonl", "6")] {
        let v = stdout_json(&daaria(d, &["simulate", "--scenario", "multi-hazard", "--seed", seed, "--out", out]));
        assert_eq!(v["records"], 200);
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.truth.jsonl"), read("b.truth.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    // the truth sidecar carries no noise, so it does not depend on the seed
    assert_eq!(read("a.truth.jsonl"), read("c.truth.jsonl"));
}

#[test]
fn invalid_scenario_exits_with_code_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = r#"{"name": "bad", "duration": 5, "tick_rate": 0, "seed": 1,
        "ego": {"speed_profile": [[0, 10]]}, "actors": [],
        "gaze": {"mode": "user-driven", "origin_m": [0.5, 0.4, 1.2]}}"#;
    std::fs::write(d.join("bad.json"), scenario).unwrap();
    let out = daaria(d, &["simulate", "--scenario", "bad.json", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("tick_rate"), "{err}");

    let out = daaria(d, &["simulate", "--scenario", "no-such-scenario", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_log_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&daaria(d, &["simulate", "--scenario", "parked-cars", "--out", "run.jsonl"]));
    let text = std::fs::read_to_string(d.join("run.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json";
    std::fs::write(d.join("broken.jsonl"), lines.join("\n")).unwrap();
    let out = daaria(d, &["replay", "--log", "broken.jsonl", "--calib", "run.calib.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn replay_of_parked_cars_shows_no_arrows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&daaria(d, &["simulate", "--scenario", "parked-cars", "--out", "run.jsonl"]));
    let m = stdout_json(&daaria(
        d,
        &["replay", "--log", "run.jsonl", "--calib", "run.calib.json", "--metrics", "m.json", "--vane", "vane.jsonl"],
    ));
    assert_eq!(m["frames"], 160);
    assert_eq!(m["frames_with_arrows"], 0);
    assert_eq!(m["max_arrows"], 0);
    let on_disk: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
    let vane = std::fs::read_to_string(d.join("vane.jsonl")).unwrap();
    assert_eq!(vane.lines().count(), 160);
}

#[test]
fn replay_renders_one_bird_and_scene_image_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&daaria(d, &["simulate", "--scenario", "crossing-pedestrian", "--out", "run.jsonl"]));
    stdout_json(&daaria(d, &["replay", "--log", "run.jsonl", "--calib", "run.calib.json", "--render", "frames"]));
    let frames = d.join("frames");
    let first = std::fs::read(frames.join("scene_00000.ppm")).unwrap();
    assert!(first.starts_with(b"P6\n640 360\n255\n"));
    assert!(frames.join("bird_00199.ppm").is_file());
    assert!(!frames.join("bird_00200.ppm").exists());
    assert_eq!(std::fs::read_to_string(frames.join("vane.jsonl")).unwrap().lines().count(), 200);
}

#[test]
fn calibrate_recovers_truth_from_noiseless_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&daaria(d, &["simulate", "--scenario", "parked-cars", "--out", "run.jsonl"]));
    stdout_json(&daaria(
        d,
        &[
            "calib-synth", "--truth", "run.calib.json", "--n", "10", "--gaze-noise-deg", "0", "--dist-noise-m", "0",
            "--trials", "1", "--write-samples", "s.jsonl", "--write-target", "t.json",
        ],
    ));
    for method in ["kabsch", "icp"] {
        let mut args = vec!["calibrate", "--samples", "s.jsonl", "--target", "t.json", "--truth", "run.calib.json"];
        args.extend(["--method", method, "--out", "est.json"]);
        if method == "icp" {
            args.extend(["--init", "run.calib.json"]);
        }
        let v = stdout_json(&daaria(d, &args));
        assert!(v["rotation_error_rad"].as_f64().unwrap() < 1e-9, "{method}: {v}");
        assert!(v["translation_error_m"].as_f64().unwrap() < 1e-9, "{method}: {v}");
        assert_eq!(v["residuals"].as_array().unwrap().len(), 10);
    }
    // the written calibration is usable for replay
    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("est.json")).unwrap()).unwrap();
    assert!(est["rotation"].is_array());
}

#[test]
fn calib_synth_rejects_too_few_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&daaria(d, &["simulate", "--scenario", "parked-cars", "--out", "run.jsonl"]));
    let out = daaria(d, &["calib-synth", "--truth", "run.calib.json", "--n", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--n"));
}

#[test]
fn serve_refuses_a_busy_port() {
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let out = daaria(dir.path(), &["serve", "--port", &port]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
}
