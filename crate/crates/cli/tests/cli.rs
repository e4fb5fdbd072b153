use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mixflow::channel::{load_channel, save_channel};
use mixflow::metrics::choi_distance;
use mixflow::{depolarizing, generate_dataset, Dataset, DatasetHeader, MixedUnitaryChannel, Tolerances};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn mixflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixflow"))
        .current_dir(dir)
        .env_remove("MIXFLOW_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_dataset(dir: &Path, channel: &MixedUnitaryChannel, m: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = generate_dataset(channel, m, &mut rng).unwrap();
    let ds = Dataset { header: DatasetHeader { dim: channel.dim(), m, seed, channel_sha: None }, pairs };
    ds.save(&dir.join("dataset.json")).unwrap();
    save_channel(channel, &dir.join("truth.json")).unwrap();
}

#[test]
fn synth_rank_one_qubit_has_unit_weight() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixflow(dir.path(), &["synth", "--dim", "2", "--rank", "1", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&dir.path().join("channel.json"))["weights"], serde_json::json!([1.0]));
    let manifest: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn synth_is_byte_identical_and_reloads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = mixflow(d.path(), &["synth", "--dim", "5", "--rank", "5", "-m", "1", "--seed", "11"]);
        assert!(out.status.success());
    }
    for f in ["channel.json", "dataset.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let tol = Tolerances::default();
    let c = load_channel(&a.path().join("channel.json"), &tol).unwrap();
    assert_eq!((c.dim(), c.rank()), (5, 5));
    assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    let ds = Dataset::load(&a.path().join("dataset.json"), &tol).unwrap();
    assert_eq!(ds.pairs.len(), 1);
    let sigma = c.apply(&ds.pairs[0].input).unwrap();
    assert!(sigma.max_abs_diff(&ds.pairs[0].output) < 1e-12);
}

#[test]
fn synth_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mixflow(dir.path(), &["synth", "--dim", "0"]).status.code(), Some(1));
    assert_eq!(mixflow(dir.path(), &["synth", "-m", "0"]).status.code(), Some(1));
    assert_eq!(mixflow(dir.path(), &["synth", "--depolarizing", "1.5"]).status.code(), Some(1));
}

#[test]
fn solve_identity_channel_with_one_component() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 2, 1);
    let out = mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "-R", "1", "--truth", "truth.json", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("out/report.json"));
    assert_eq!(report["final_rank"], 1);
    assert!(report["final_objective"].as_f64().unwrap() <= 1e-17);
    assert!(report["choi_distance"].as_f64().unwrap() < 1e-6);
    for f in ["result.json", "trajectory.csv", "events.json", "solve.manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    assert!(report.get("wall_time").is_none());
}

#[test]
fn solve_twice_gives_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    write_dataset(dir.path(), &MixedUnitaryChannel::random(3, 2, &mut rng), 2, 2);
    for out in ["a", "b"] {
        let o = mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "-R", "4", "--seed", "9", "--out-dir", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["trajectory.csv", "events.json", "result.json", "report.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn solve_budget_stop_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    write_dataset(dir.path(), &MixedUnitaryChannel::random(3, 2, &mut rng), 1, 3);
    let out = mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "-R", "4", "--max-steps", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&dir.path().join("report.json"))["stop"], "step_limit");
}

#[test]
fn solve_rejects_malformed_dataset() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{ \"header\": 3 ").unwrap();
    let out = mixflow(dir.path(), &["solve", "--dataset", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn solve_reads_config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 1, 4);
    fs::write(dir.path().join("cfg.json"), r#"{ "max_steps": 3, "objective_tol": 1e-30 }"#).unwrap();
    let out = mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "-R", "2", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = json(&dir.path().join("solve.manifest.json"));
    assert_eq!(manifest["config"]["flow"]["max_steps"], 3);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);

    fs::write(dir.path().join("cfg.json"), r#"{ "max_step": 3 }"#).unwrap();
    assert_eq!(mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "--config", "cfg.json"]).status.code(), Some(1));
}

#[test]
fn eval_of_channel_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    write_dataset(dir.path(), &MixedUnitaryChannel::random(3, 3, &mut rng), 2, 5);
    let out = mixflow(dir.path(), &["eval", "--truth", "truth.json", "--recovered", "truth.json", "--dataset", "dataset.json"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["choi_distance"], 0.0);
    for f in report["fidelity_per_pair"].as_array().unwrap() {
        assert!((f.as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn eval_identity_against_depolarizing_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let depol = depolarizing(0.75).unwrap();
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 2, 6);
    save_channel(&depol, &dir.path().join("depol.json")).unwrap();
    let out = mixflow(dir.path(), &["eval", "--truth", "truth.json", "--recovered", "depol.json", "--dataset", "dataset.json"]);
    assert!(out.status.success());
    let report = json(&dir.path().join("eval.json"));
    let expect = choi_distance(&MixedUnitaryChannel::identity(2), &depol).unwrap();
    assert_eq!(report["choi_distance"].as_f64().unwrap(), expect);
}

#[test]
fn eval_reports_missing_file_and_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 1, 7);
    let out = mixflow(dir.path(), &["eval", "--truth", "nope.json", "--recovered", "truth.json", "--dataset", "dataset.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    save_channel(&MixedUnitaryChannel::identity(3), &dir.path().join("three.json")).unwrap();
    let out = mixflow(dir.path(), &["eval", "--truth", "truth.json", "--recovered", "three.json", "--dataset", "dataset.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn repro_depolarizing_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixflow(dir.path(), &["repro", "example2-depol", "--runs", "1", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("run-000/report.json"));
    assert!(report["final_objective"].as_f64().unwrap() <= 1e-17);
    let tol = Tolerances::default();
    let truth = load_channel(&dir.path().join("truth.json"), &tol).unwrap();
    let got = load_channel(&dir.path().join("run-000/result.json"), &tol).unwrap();
    assert_eq!(report["choi_distance"].as_f64().unwrap(), choi_distance(&truth, &got).unwrap());
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count\n"));
    let counts: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counts, 1);
}

#[test]
fn repro_results_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    for (out, jobs) in [("a", "1"), ("b", "3")] {
        let o = mixflow(dir.path(), &["repro", "example1-single", "--runs", "4", "--jobs", jobs, "--out-dir", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = json(&dir.path().join("a/repro.manifest.json"));
    let b = json(&dir.path().join("b/repro.manifest.json"));
    assert_eq!(a["artifacts"], b["artifacts"]);
}

#[test]
fn repro_show_preset_round_trips_through_preset_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixflow(dir.path(), &["repro", "example1-multi", "--show-preset", "--pairs", "100"]);
    assert!(out.status.success());
    let mut preset: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(preset["pairs"], 100);
    preset["pairs"] = 2.into();
    preset["runs"] = 1.into();
    preset["truth"] = serde_json::json!({ "random": { "dim": 2, "rank": 2 } });
    fs::write(dir.path().join("custom.json"), preset.to_string()).unwrap();
    let out = mixflow(dir.path(), &["repro", "--preset-file", "custom.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run-000/report.json").exists());
    assert_eq!(mixflow(dir.path(), &["repro", "example9"]).status.code(), Some(1));
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mixflow"))
        .current_dir(dir.path())
        .env("MIXFLOW_OUT_DIR", "from-env")
        .args(["synth", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/channel.json").exists());
}

#[test]
fn gradcheck_passes_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixflow(dir.path(), &["gradcheck", "--samples", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&dir.path().join("gradcheck.json"));
    assert_eq!(s["cases"].as_array().unwrap().len(), 18);
    assert!(s["max_rel_error"].as_f64().unwrap() <= 1e-6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn replay_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 1, 8);
    assert!(mixflow(dir.path(), &["solve", "--dataset", "dataset.json", "-R", "1", "--out-dir", "a"]).status.success());
    let ok = mixflow(dir.path(), &["replay", "a/solve.manifest.json", "--out-dir", "b"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    write_dataset(dir.path(), &MixedUnitaryChannel::identity(2), 1, 9);
    let bad = mixflow(dir.path(), &["replay", "a/solve.manifest.json", "--out-dir", "c"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("changed"));
}
