use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgpo::nets::{Checkpoint, Policy};
use serde_json::Value;

const SMALL: &str = r#"
episode_length = 20
horizon = 20
num_envs = 4
policy_hidden = [8]
critic_hidden = [8]
epochs = 5
checkpoint_every = 2
eval_episodes = 2
delta_init = 1e-2
delta_upper = 1.0

[ablation]
repetitions = 3
stages = [0.0, 0.5]
traj_lengths = [1, 5]
delta_hats = [1e-4, 1e-2]
num_envs = 4
policy_hidden = [4]
critic_hidden = [8]
train_iterations = 4
seeds = [0, 1]
"#;

fn cgpo(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cgpo"));
    cmd.args(args).env_remove("CGPO_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("CGPO_OUT_DIR", d);
    }
    cmd.output().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn zero_policy(dir: &Path) -> PathBuf {
    let policy = Policy::<f64>::new(1, 1, vec![8], -1.0, 1.0, 7).unwrap();
    let p = dir.join("zero.json");
    Checkpoint::new("policy", &policy.net).save(&p).unwrap();
    p
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dir = run_dir(&cgpo(&["train", "-c", cfg.to_str().unwrap()], Some(tmp.path())));
    assert!(dir.starts_with(tmp.path()));
    let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    let lines: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["k"], 0);
    assert!(lines.iter().all(|l| l["case"].is_string() && l["delta_hat"].is_number()));
    for k in ["iter-000002", "iter-000004", "iter-000005"] {
        for f in ["policy.json", "critic_r.json", "critic_c.json"] {
            assert!(dir.join("checkpoints").join(k).join(f).is_file(), "{k}/{f}");
        }
    }
    let m = manifest(&dir);
    assert_eq!(m["status"], "completed");
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["config"]["epochs"], 5);
    assert_eq!(m["summary"]["iterations"], 5);
    let name = dir.file_name().unwrap().to_str().unwrap();
    assert!(name.ends_with(&m["config_hash"].as_str().unwrap()[..12]));
}

#[test]
fn same_config_and_seed_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let args = ["train", "-c", cfg.to_str().unwrap(), "--seed", "3"];
    let a = run_dir(&cgpo(&args, Some(tmp.path())));
    let b = run_dir(&cgpo(&args, Some(tmp.path())));
    assert_ne!(a, b);
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = cgpo(&["train", "-c", cfg.to_str().unwrap(), "--set", "horizon=50"], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
    let out = cgpo(&["train", "--set", "delta_lower=1.0"], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    let out = cgpo(&["train", "--algorithm", "ppo"], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("algorithm"));
    // nothing was written for rejected configs
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn flags_beat_file_and_env_sets_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let elsewhere = tmp.path().join("elsewhere");
    let out = cgpo(
        &["train", "-c", cfg.to_str().unwrap(), "--set", "epochs=3", "--epochs", "2", "--out-dir", elsewhere.to_str().unwrap()],
        Some(tmp.path()),
    );
    let dir = run_dir(&out);
    assert!(dir.starts_with(&elsewhere));
    assert_eq!(manifest(&dir)["config"]["epochs"], 2);
    let dir = run_dir(&cgpo(&["train", "-c", cfg.to_str().unwrap(), "--set", "epochs=3"], Some(tmp.path())));
    assert_eq!(dir.parent().unwrap(), tmp.path());
    assert_eq!(manifest(&dir)["config"]["epochs"], 3);
}

#[test]
fn zero_policy_eval_is_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = zero_policy(tmp.path());
    let args = [
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--episodes",
        "1",
        "--set",
        "start={ kind = \"fixed\", state = [0.0] }",
    ];
    let out = cgpo(&args, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // f(0) = 0.1 per step over T = 100
    assert_eq!(v["mean_cost"].as_f64().unwrap(), 10.0);
    assert_eq!(v["std_cost"].as_f64().unwrap(), 0.0);
    assert_eq!(v["feasible"], false);
    assert_eq!(cgpo(&args, None).stdout, out.stdout);
}

#[test]
fn eval_is_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dir = run_dir(&cgpo(&["train", "-c", cfg.to_str().unwrap()], Some(tmp.path())));
    let ck = dir.join("checkpoints/iter-000005/policy.json");
    let args = ["eval", "-c", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--episodes", "6", "--seed", "9"];
    let a = cgpo(&args, None);
    assert!(a.status.success());
    assert_eq!(a.stdout, cgpo(&args, None).stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["episodes"], 6);
    assert!(v["std_cost"].as_f64().unwrap() > 0.0);
}

#[test]
fn corrupt_checkpoints_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let good = fs::read_to_string(zero_policy(tmp.path())).unwrap();
    let cases = [
        ("garbage.json", "not json at all".to_string()),
        ("truncated.json", good[..good.len() / 2].to_string()),
        ("role.json", good.replace("\"policy\"", "\"critic_r\"")),
        ("format.json", good.replace("\"format\":1", "\"format\":99")),
    ];
    for (name, body) in cases {
        let p = tmp.path().join(name);
        fs::write(&p, body).unwrap();
        let out = cgpo(&["eval", "--checkpoint", p.to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(4), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cgpo(&["eval", "--checkpoint", tmp.path().join("missing.json").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    // a sound checkpoint for the wrong environment is a config error
    let zero = tmp.path().join("zero.json");
    let out = cgpo(&["eval", "--checkpoint", zero.to_str().unwrap(), "--env", "point-mass"], None);
    assert_eq!(out.status.code(), Some(2));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn ablations_emit_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = cfg.to_str().unwrap();

    let dir = run_dir(&cgpo(&["--workers", "2", "ablate", "estimation", "-c", c], Some(tmp.path())));
    assert_eq!(csv_rows(&dir.join("estimation.csv")).len(), 2 * 2);
    assert_eq!(manifest(&dir)["command"], "ablate estimation");

    let dir = run_dir(&cgpo(&["ablate", "gradient", "-c", c], Some(tmp.path())));
    assert_eq!(csv_rows(&dir.join("gradient.csv")).len(), 2 * 2 * 2);

    let dir = run_dir(&cgpo(&["ablate", "radius", "-c", c, "--epochs", "3"], Some(tmp.path())));
    let rows = csv_rows(&dir.join("radius.csv"));
    assert_eq!(rows.len(), 2 * 2);
    let modes: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(modes, ["fixed", "adaptive", "fixed", "adaptive"]);
}

#[test]
fn stage_checkpoints_replace_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let policy = Policy::<f64>::new(1, 1, vec![4], -1.0, 1.0, 1).unwrap();
    let ck = tmp.path().join("p.json");
    Checkpoint::new("policy", &policy.net).save(&ck).unwrap();
    let ck = ck.to_str().unwrap();

    let out = cgpo(&["ablate", "estimation", "-c", c, "--stage-checkpoint", ck], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2), "one checkpoint for two stages");
    let failed: Vec<_> = fs::read_dir(tmp.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(manifest(&failed[0].path())["status"], "failed");

    let dir = run_dir(&cgpo(
        &["ablate", "estimation", "-c", c, "--set", "ablation.allow_training=false", "--stage-checkpoint", ck, "--stage-checkpoint", ck],
        Some(tmp.path()),
    ));
    assert_eq!(csv_rows(&dir.join("estimation.csv")).len(), 4);
}

#[test]
fn help_and_version_succeed() {
    assert!(cgpo(&["--help"], None).status.success());
    assert!(cgpo(&["--version"], None).status.success());
    assert_eq!(cgpo(&["frobnicate"], None).status.code(), Some(2));
}
