use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ipsk_core::config::{lennard_jones, opinion, ExperimentConfig, Scale};
use ipsk_core::io::read_trajectory;
use ipsk_core::sim::{simulate, NoiseStream};
use serde_json::Value;
use tempfile::TempDir;

fn small_opinion() -> ExperimentConfig {
    let mut cfg = opinion(Scale::Desk);
    cfg.t = 1.0;
    cfg.t_f = 2.0;
    cfg.m = 6;
    cfg.m_rho = 16;
    cfg.study.m_list = vec![4, 8, 16];
    cfg.study.replicates = 2;
    cfg.study.gap_list = vec![1];
    cfg.study.sigma_list = vec![0.1];
    cfg.study.gap_m = 8;
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn ipsk(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ipsk"));
    cmd.args(args).env_remove("IPSK_SEED").env_remove("IPSK_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_replayable_trajectories() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_opinion();
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("sim");
    ok(&ipsk(&["simulate", "--config", s(&config), "--out", s(&out), "--count", "3", "--csv"], &[]));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["m"], 3);
    let entries = manifest["trajectories"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    let params = cfg.params().unwrap();
    for (k, e) in entries.iter().enumerate() {
        let file = out.join(e["file"].as_str().unwrap());
        let traj = read_trajectory(fs::File::open(file).unwrap()).unwrap();
        let noise = NoiseStream::new(e["seed"].as_u64().unwrap(), e["stream"].as_u64().unwrap());
        let again = simulate(&params, &cfg.init, cfg.t, cfg.dt, noise).unwrap();
        assert_eq!(traj.states(), again.states());
        assert!(out.join(format!("traj_{k:05}.csv")).exists());
    }
    assert!(out.join("timing.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        ok(&ipsk(&["simulate", "--config", s(&config), "--out", s(&out)], &[]));
        let files: Vec<String> = (0..6).map(|k| s(&out.join(format!("traj_{k:05}.bin"))).to_string()).collect();
        let mut args = vec!["estimate", "--config", s(&config), "--out", s(&out)];
        args.extend(files.iter().map(String::as_str));
        ok(&ipsk(&args, &[]));
        dirs.push(out);
    }
    for name in
        ["traj_00000.bin", "traj_00005.bin", "manifest.json", "kernel.json", "basis.json", "kernel.csv", "rho.csv", "diagnostics.json"]
    {
        assert!(fs::read(dirs[0].join(name)).unwrap() == fs::read(dirs[1].join(name)).unwrap(), "{name} differs");
    }
    let diag = json(&dirs[0].join("diagnostics.json"));
    assert!(diag["kernel_error_empirical"].as_f64().unwrap() > 0.0);
    assert_eq!(diag["trajectories"], 6);
}

#[test]
fn missing_trajectory_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let out = ipsk(&["estimate", "--config", s(&config), "--out", s(&tmp.path().join("o")), s(&tmp.path().join("nope.bin"))], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn mixed_dimensions_are_a_consistency_error() {
    let tmp = TempDir::new().unwrap();
    let od = write_config(tmp.path(), "od.json", &small_opinion());
    let mut lj_cfg = lennard_jones(Scale::Desk);
    lj_cfg.t = 0.01;
    lj_cfg.m = 1;
    lj_cfg.study.gap_list = vec![1];
    let lj = write_config(tmp.path(), "lj.json", &lj_cfg);
    ok(&ipsk(&["simulate", "--config", s(&od), "--out", s(&tmp.path().join("od")), "--count", "1"], &[]));
    ok(&ipsk(&["simulate", "--config", s(&lj), "--out", s(&tmp.path().join("lj"))], &[]));
    let a = tmp.path().join("od/traj_00000.bin");
    let b = tmp.path().join("lj/traj_00000.bin");
    let out = ipsk(&["estimate", "--config", s(&od), "--out", s(&tmp.path().join("e")), s(&a), s(&b)], &[]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gap_not_dividing_the_horizon_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_opinion();
    cfg.study.gap_list = vec![1, 3];
    let text = serde_json::to_string(&cfg).unwrap();
    let config = tmp.path().join("bad.json");
    fs::write(&config, text).unwrap();
    let out = ipsk(&["gap-study", "--config", s(&config), "--out", s(&tmp.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(&small_opinion().to_json()).unwrap();
    v["bogus"] = Value::from(1);
    let config = tmp.path().join("bad.json");
    fs::write(&config, v.to_string()).unwrap();
    let out = ipsk(&["simulate", "--config", s(&config), "--out", s(&tmp.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_gap_study_reports_the_baseline() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let out = tmp.path().join("g");
    ok(&ipsk(&["gap-study", "--config", s(&config), "--out", s(&out)], &[]));
    let csv = fs::read_to_string(out.join("gap_study.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sigma,x,mean_error,std_error,n,lambda_min");
    assert_eq!(lines.len(), 2);
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!((fields[0], fields[1]), (0.1, 0.01));
    assert!(fields[2] > 0.0);
    let fits = json(&out.join("gap_study.json"));
    assert!(fits[0]["fit"]["slope"].is_null());
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let env_out = tmp.path().join("env");
    ok(&ipsk(&["simulate", "--config", s(&config), "--count", "1"], &[("IPSK_SEED", "77"), ("IPSK_OUT", s(&env_out))]));
    assert_eq!(json(&env_out.join("manifest.json"))["trajectories"][0]["seed"], 77);
    let flag_out = tmp.path().join("flag");
    ok(&ipsk(
        &["simulate", "--config", s(&config), "--count", "1", "--seed", "5", "--out", s(&flag_out)],
        &[("IPSK_SEED", "77"), ("IPSK_OUT", s(&env_out))],
    ));
    assert_eq!(json(&flag_out.join("manifest.json"))["trajectories"][0]["seed"], 5);
}

#[test]
fn convergence_writes_fit() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let out = tmp.path().join("c");
    ok(&ipsk(&["convergence", "--config", s(&config), "--out", s(&out)], &[]));
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(json(&out.join("convergence.json"))["points"].as_array().unwrap().len(), 3);
}

#[test]
fn zero_threads_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", &small_opinion());
    let out = ipsk(&["--threads", "0", "simulate", "--config", s(&config), "--out", s(&tmp.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reproduce_writes_every_study() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_opinion();
    cfg.study.gap_list = vec![1, 2, 5, 10];
    cfg.study.prediction_ics = 3;
    if let Some(lt) = cfg.study.long_t.as_mut() {
        lt.grid = vec![(4, 1.0), (4, 2.0), (8, 2.0)];
        lt.m_rho = 4;
    }
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("r");
    ok(&ipsk(&["reproduce", "opinion", "--config", s(&config), "--out", s(&out)], &[]));
    for name in ["config.json", "convergence.csv", "gap_study.csv", "long_t.csv", "prediction.json", "summary.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["target"], "opinion");
    assert_eq!(summary["prediction"]["training"].as_array().unwrap().len(), 2);
    assert!(json(&out.join("config.json"))["out"].is_null());
}

#[test]
fn preset_output_is_a_valid_config() {
    let out = ipsk(&["preset", "lennard-jones", "--scale", "full"], &[]);
    ok(&out);
    let cfg = ExperimentConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, lennard_jones(Scale::Full));
}
