use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dgan");

const SMALL: &str = "\
num_devices = 3

[dataset]
points_per_device = 200

[train]
batch_size = 16
generator_batch = 16

[eval]
every = 5
samples = 200
holdout = 200

[run]
max_rounds = 12
";

fn dgan(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("DGAN_SEED");
    if let Some(s) = seed {
        cmd.env("DGAN_SEED", s);
    }
    cmd.output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn run_writes_artifacts_with_consistent_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = dgan(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rounds.csv", "summary.csv", "config.resolved", "samples.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let rounds = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 13);
    let bits: u64 = ["uplink_bits", "downlink_bits"]
        .iter()
        .flat_map(|c| column(&rounds, c))
        .map(|v| v.parse::<u64>().unwrap())
        .sum();
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(column(&summary, "total_bits"), vec![bits.to_string()]);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("seeded");
    let o = dgan(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], Some("77"));
    assert!(o.status.success());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(column(&summary, "master_seed"), vec!["77".to_string()]);

    let bad = dgan(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], Some("seven"));
    assert!(!bad.status.success());
}

#[test]
fn sweep_over_ratio_writes_one_dir_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = dgan(
        &["sweep", "--config", &cfg, "--axis", "scheduler.ratio", "--values", "0.2,0.5,1.0", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for v in ["0.2", "0.5", "1.0"] {
        assert!(out.join(format!("scheduler.ratio={v}")).join("rounds.csv").is_file());
    }
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
}

#[test]
fn sweep_rejects_empty_values_and_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert!(!dgan(&["sweep", "--axis", "scheduler.ratio", "--values", "", "--out", out], None).status.success());
    assert!(!dgan(&["sweep", "--axis", "scheduler.nope", "--values", "1", "--out", out], None).status.success());
}

#[test]
fn compare_writes_paired_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("cmp");
    let o = dgan(
        &["compare", "--config", &cfg, "--frameworks", "proposed_serial,fedgan", "--seeds", "1,2", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(out.join("fedgan_seed2").join("summary.csv").is_file());
}

#[test]
fn gradcheck_and_selftest_exit_zero() {
    let o = dgan(&["gradcheck", "--instances", "20"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dgan(&["selftest"], None).status.success());
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = dgan(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.learning_rate"));
}
