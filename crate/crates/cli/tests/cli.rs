use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn photospike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photospike")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = photospike(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A config small enough for the whole pipeline to run in seconds.
fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("quick.json");
    let cfg = serde_json::json!({
        "td3": { "total_steps": 600, "warmup_steps": 200, "batch": 32, "eval_every": 300, "eval_episodes": 1 },
        "cotrain": { "total_steps": 400, "warmup_steps": 100 },
        "spgd": { "max_iters": 40 },
        "samples": 20,
        "threshold": -1500.0
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let train = tmp.path().join("train");
    ok(&["train", "--task", "pendulum", "--config", s(&cfg), "--seed", "7", "--out", s(&train)]);
    for f in ["actor.json", "critics.json", "reward.csv", "reward_ma.csv", "summary.json", "resolved-config.json"] {
        assert!(train.join(f).exists(), "train is missing {f}");
    }
    let resolved = json(train.join("resolved-config.json"));
    assert_eq!(resolved["seed"], 7);
    assert_eq!(resolved["td3"]["seed"], 7);
    assert_eq!(resolved["td3"]["gamma"], 0.99);
    assert_eq!(json(train.join("summary.json"))["steps"], 600);

    let cal = tmp.path().join("cal");
    ok(&["calibrate", "--config", s(&cfg), "--seed", "7", "--out", s(&cal), "--snapshot", s(&train.join("actor.json"))]);
    let summary = json(cal.join("summary.json"));
    assert_eq!(summary["converged"], false);
    assert_eq!(summary["iterations"], 40);
    assert_eq!(summary["transmitted_values"], 20 * 16);
    let trace = std::fs::read_to_string(cal.join("calibration.csv")).unwrap();
    let mut best = f64::NEG_INFINITY;
    for line in trace.lines().skip(1) {
        let b: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(b >= best);
        best = b;
    }
    assert!(cal.join("resolved-config.json").exists());

    let cmp = tmp.path().join("cmp");
    let (w, v) = (cal.join("weights.json"), cal.join("voltages.csv"));
    ok(&["compare", "--config", s(&cfg), "--out", s(&cmp), "--weights", s(&w), "--voltages", s(&v)]);
    let dev = json(cmp.join("deviation.json"));
    assert_eq!(dev["n_samples"], 20);
    let series = std::fs::read_to_string(cmp.join("deviation_series.csv")).unwrap();
    assert!(series.starts_with("sample,channel,target,measured,error\n"));
    assert_eq!(series.lines().count(), 1 + 20 * 16);

    let co = tmp.path().join("co");
    let critics = train.join("critics.json");
    ok(&[
        "cotrain", "--config", s(&cfg), "--seed", "7", "--out", s(&co), "--weights", s(&w), "--voltages", s(&v),
        "--critics", s(&critics),
    ]);
    let tuned: Value = json(co.join("actor.json"));
    let hardware: Value = json(cal.join("hardware.json"));
    let rows: Vec<Value> = tuned["W2"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).collect();
    assert_eq!(&Value::Array(rows), &hardware["w_eff_scaled"]["data"]);

    let rep = tmp.path().join("rep");
    ok(&["report", "--config", s(&cfg), "--out", s(&rep), s(&train), s(&co)]);
    let conv = json(rep.join("convergence.json"));
    assert_eq!(conv["seeds"][0]["seed"], 7);
    assert!(rep.join("convergence.csv").exists());
    assert!(rep.join("resolved-config.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(dir)]);
    }
    for f in ["actor.json", "critics.json", "reward.csv", "reward_ma.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let (mut ra, mut rb) = (json(a.join("resolved-config.json")), json(b.join("resolved-config.json")));
    ra["out"] = Value::Null;
    rb["out"] = Value::Null;
    assert_eq!(ra, rb);
}

#[test]
fn resolved_config_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out", s(&a)]);
    ok(&["train", "--config", s(&a.join("resolved-config.json")), "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("reward.csv")).unwrap(), std::fs::read(b.join("reward.csv")).unwrap());
}

#[test]
fn target_similarity_stops_at_the_first_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let train = tmp.path().join("train");
    ok(&["train", "--config", s(&cfg), "--out", s(&train)]);
    let cal = tmp.path().join("cal");
    ok(&[
        "calibrate", "--config", s(&cfg), "--out", s(&cal), "--snapshot", s(&train.join("actor.json")),
        "--target-similarity", "0.05",
    ]);
    let summary = json(cal.join("summary.json"));
    assert_eq!(summary["converged"], true);
    assert!(summary["best_similarity"].as_f64().unwrap() >= 0.05);
    let n = summary["iterations"].as_u64().unwrap();
    assert!(n < 40, "ran {n} iterations");
}

#[test]
fn missing_config_file_exits_with_code_2() {
    let out = photospike(&["train", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn invalid_config_values_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"td3": {"gamma": 1.5}}"#).unwrap();
    let out = photospike(&["train", "--config", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&path, r#"{"no_such_field": 1}"#).unwrap();
    let out = photospike(&["train", "--config", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_exits_with_code_3() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let tmp = tempfile::tempdir().unwrap();
    let endpoint = format!("tcp:{addr}");
    let out = photospike(&["train", "--task", "remote", "--endpoint", &endpoint, "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn remote_task_trains_against_a_served_environment() {
    use photospike::envs::{serve_environment, Pendulum, PendulumParams};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let reader = std::io::BufReader::new(stream.try_clone().unwrap());
        let mut env = Pendulum::new(PendulumParams::default(), 0).unwrap();
        let _ = serve_environment(&mut env, reader, stream);
    });
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let endpoint = format!("tcp:{addr}");
    let out_dir = tmp.path().join("remote");
    ok(&["train", "--config", s(&cfg), "--endpoint", &endpoint, "--out", s(&out_dir)]);
    let resolved = json(out_dir.join("resolved-config.json"));
    assert_eq!(resolved["task"], "remote");
    assert_eq!(json(out_dir.join("summary.json"))["steps"], 600);
}
