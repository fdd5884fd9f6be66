//! End-to-end runs of the `mcnoma` binary.

use std::path::Path;
use std::process::{Command, Output};

fn mcnoma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcnoma"))
        .args(args)
        .env("MCNOMA_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY_TRAIN: &str = "
num_users = 3
num_subcarriers = 2
max_per_subcarrier = 2
episodes = 8
sa_retries = 2
pa_retries = 2
pa_steps = 4
n_full = 16
d_res = 1
sa_buffer = 8
pa_buffer = 8
batch = 4
eval_every = 4
";

#[test]
fn verify_core_math_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("checks.csv");
    let out = mcnoma(&["verify", "core-math", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("suite,check,value,limit,passed\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")));
}

#[test]
fn unknown_suite_and_unknown_key_fail() {
    assert!(!mcnoma(&["verify", "everything"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.conf", "sweep_axis = num_users\nsweep_values = 2\nsolvers = oma\nbogus = 1\n");
    let out = mcnoma(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn run_writes_metric_csvs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.conf",
        "num_subcarriers = 2\nmax_per_subcarrier = 2\nsweep_axis = num_users\nsweep_values = 2, 3\nsolvers = exhaustive, oma\ninstances = 2\n",
    );
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = mcnoma(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--seed", "4", "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a", "1"), run("b", "2"));
    for metric in ["objective", "throughput", "effective_throughput", "qos_satisfaction", "feasible"] {
        let file = format!("{metric}.csv");
        let x = std::fs::read(a.join(&file)).unwrap();
        assert_eq!(x, std::fs::read(b.join(&file)).unwrap(), "{file} differs across thread counts");
        assert_eq!(String::from_utf8(x).unwrap().lines().count(), 1 + 2 * 2);
    }
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "train.conf", TINY_TRAIN);
    let ckpt = dir.path().join("agents.bin");
    let log = dir.path().join("log.csv");
    let out = mcnoma(&["train", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 1 + 8);
    let scenario = ckpt.with_extension("scenario");
    assert!(scenario.exists());

    let report = dir.path().join("report.csv");
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--scenario", scenario.to_str().unwrap(), "--config", &cfg];
        args.extend_from_slice(extra);
        mcnoma(&args)
    };
    let out = eval(&["--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for key in ["feasible", "objective_bps_per_hz", "throughput_bps_per_hz", "effective_throughput_bps_per_hz", "qos_satisfaction"] {
        assert!(stdout.lines().any(|l| l.starts_with(key)), "missing {key}");
    }
    assert!(report.exists());
    assert_eq!(stdout, String::from_utf8(eval(&[]).stdout).unwrap(), "greedy evaluation is deterministic");

    // the checkpoint carries its own architecture
    let other = write(dir.path(), "other.conf", &TINY_TRAIN.replace("n_full = 16", "n_full = 32"));
    let out = mcnoma(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--scenario", scenario.to_str().unwrap(), "--config", &other]);
    assert!(out.status.success());
    assert_eq!(stdout, String::from_utf8(out.stdout).unwrap());

    // but not on a scenario with a different user count
    let two = write(dir.path(), "two.conf", &TINY_TRAIN.replace("num_users = 3", "num_users = 2"));
    let ckpt2 = dir.path().join("two.bin");
    assert!(mcnoma(&["train", &two, "--checkpoint", ckpt2.to_str().unwrap()]).status.success());
    let out = mcnoma(&["eval", "--checkpoint", ckpt2.to_str().unwrap(), "--scenario", scenario.to_str().unwrap()]);
    assert!(!out.status.success());
}
