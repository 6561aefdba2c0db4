use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rftopo::io::{read_series, read_topology};

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn small(runs: usize, length: usize, extra: &str) -> String {
    format!(
        r#"
runs = {runs}
output_dir = "out"

[generator]
nodes = 5
order = 2
length = {length}
switch_interval = 1000
min_active = 1
seed = 5
{extra}

[estimator]
nodes = 5
order = 2
features = 10
rff_seed = 6
step = {{ schedule = "reciprocal", gamma = 1000.0 }}
"#
    )
}

fn rftopo(args: &[&str], env: Option<(&str, &Path)>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rftopo"));
    cmd.args(args).env_remove("RFTOPO_OUTPUT_DIR");
    if let Some((k, v)) = env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rftopo(args, None);
    assert!(out.status.success(), "rftopo {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_series_and_switching_topology() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 3000, ""));
    ok(&["generate", "-c", s(&cfg)]);
    let run = dir.path().join("out/run_000");
    let series = read_series::<f64>(&run.join("data.csv")).unwrap();
    assert_eq!((series.len(), series.nodes()), (3000, 5));
    let header = fs::read_to_string(run.join("data.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,node_1,node_2,node_3,node_4,node_5");
    let track = read_topology::<f64>(&run.join("topology.jsonl")).unwrap();
    assert_eq!(track.change_times(), vec![1000, 2000]);
    assert!(run.join("config.toml").is_file());
}

#[test]
fn runs_get_their_own_directories_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(2, 300, ""));
    ok(&["generate", "-c", s(&cfg)]);
    let a = fs::read(dir.path().join("out/run_000/data.csv")).unwrap();
    let b = fs::read(dir.path().join("out/run_001/data.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_output_directory_is_created() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 200, ""));
    let target = dir.path().join("a/b/c");
    ok(&["run", "-c", s(&cfg), "-o", s(&target)]);
    for f in ["data.csv", "adjacency.csv", "predictions.csv", "checkpoint.json", "pmd.csv", "pfa.csv", "mse.csv"] {
        assert!(target.join("run_000").join(f).is_file(), "{f}");
    }
    assert!(target.join("report.json").is_file());
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 400, ""));
    let full = dir.path().join("full");
    ok(&["generate", "-c", s(&cfg), "-o", s(&full)]);
    ok(&["estimate", "-c", s(&cfg), "-o", s(&full)]);

    let text = fs::read_to_string(full.join("run_000/data.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(1 + 150).collect();
    let partial_csv = dir.path().join("first150.csv");
    fs::write(&partial_csv, head.join("\n") + "\n").unwrap();
    let partial = dir.path().join("partial");
    ok(&["estimate", "-c", s(&cfg), "-o", s(&partial), "--data", s(&partial_csv)]);

    let resumed = dir.path().join("resumed");
    let ckpt = partial.join("run_000/checkpoint.json");
    ok(&["estimate", "-c", s(&cfg), "-o", s(&resumed), "--resume", s(&ckpt)]);
    let a = fs::read(full.join("run_000/checkpoint.json")).unwrap();
    let b = fs::read(resumed.join("run_000/checkpoint.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn node_count_mismatch_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 200, ""));
    let csv = dir.path().join("three.csv");
    fs::write(&csv, "t,node_1,node_2,node_3\n0,1,2,3\n1,1,2,3\n2,1,2,3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = rftopo(&["estimate", "-c", s(&cfg), "--data", s(&csv)], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn invalid_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 200, "bogus_key = 1"));
    let out = rftopo(&["run", "-c", s(&cfg)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let cfg = config(dir.path(), &small(1, 200, "").replace("features = 10", "features = 0"));
    assert_eq!(rftopo(&["run", "-c", s(&cfg)], None).status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    assert_eq!(rftopo(&["run", "-c", s(&missing)], None).status.code(), Some(2));
}

#[test]
fn environment_overrides_config_and_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 100, ""));
    let from_env = dir.path().join("env");
    let out = rftopo(&["generate", "-c", s(&cfg)], Some(("RFTOPO_OUTPUT_DIR", &from_env)));
    assert!(out.status.success());
    assert!(from_env.join("run_000/data.csv").is_file());
    assert!(!dir.path().join("out").exists());

    let from_flag = dir.path().join("flag");
    let out = rftopo(&["generate", "-c", s(&cfg), "-o", s(&from_flag)], Some(("RFTOPO_OUTPUT_DIR", &from_env)));
    assert!(out.status.success());
    assert!(from_flag.join("run_000/data.csv").is_file());
}

#[test]
fn undefined_miss_rate_is_written_as_null() {
    let dir = tempfile::tempdir().unwrap();
    let body = small(1, 200, "").replace("switch_interval = 1000\nmin_active = 1", "edge_probability = 0.0");
    let cfg = config(dir.path(), &body);
    let out = ok(&["run", "-c", s(&cfg)]);
    let pmd = fs::read_to_string(dir.path().join("out/run_000/pmd.csv")).unwrap();
    let mut lines = pmd.lines();
    assert_eq!(lines.next(), Some("t,value"));
    assert!(lines.all(|l| l.ends_with(",null")));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["final_pmd"].is_null());
    assert!(summary["final_pfa"].is_number());
}

#[test]
fn bench_shorter_than_warmup_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 200, ""));
    let out = rftopo(&["bench", "-c", s(&cfg), "--steps", "2"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_one_timing_per_update() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 200, ""));
    ok(&["bench", "-c", s(&cfg), "--steps", "120", "--repeats", "2"]);
    ok(&["bench", "-c", s(&cfg), "--steps", "120", "--reference"]);
    for f in ["bench.csv", "bench_reference.csv"] {
        let text = fs::read_to_string(dir.path().join("out").join(f)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 118, "{f}");
        assert!(rows.iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0));
    }
}

#[test]
fn standardize_flag_is_recorded_and_changes_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(1, 300, ""));
    let plain = dir.path().join("plain");
    let scaled = dir.path().join("scaled");
    ok(&["estimate", "-c", s(&cfg), "-o", s(&plain)]);
    ok(&["estimate", "-c", s(&cfg), "-o", s(&scaled), "--standardize"]);
    let record = fs::read_to_string(scaled.join("run_000/config.toml")).unwrap();
    assert!(record.contains("standardize = true"));
    let a = fs::read(plain.join("run_000/adjacency.csv")).unwrap();
    let b = fs::read(scaled.join("run_000/adjacency.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn replay_rejects_multi_run_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small(2, 100, ""));
    assert_eq!(rftopo(&["replay", s(&cfg)], None).status.code(), Some(2));
}
