use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condpolicy"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TINY: &str = r#"
name = "tiny"
env = "ENV"
total_timesteps = 128
seeds = [3]
metric_probes = 8

[rollout]
n_envs = 2
steps_per_env = 32

[net]
hidden = [8]

[ppo]
epochs = 1
minibatch_size = 32
penalty_enabled = true

[levels]
n_seen = 6
n_unseen = 4

[eval]
episodes_per_level = 1
"#;

fn tiny(dir: &Path, env: &str) -> String {
    let p = dir.join(format!("{env}.toml"));
    fs::write(&p, TINY.replace("ENV", env)).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn bad_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(code(&cli(&["train", "/no/such/config.toml"], out)), 2);
    assert_eq!(code(&cli(&["train", "x.toml", "--bogus"], out)), 2);

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "name = \"x\"\nwarp_factor = 9\n").unwrap();
    let o = cli(&["train", unknown.to_str().unwrap()], out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp_factor"));

    let fixed = tmp.path().join("fixed.toml");
    fs::write(
        &fixed,
        format!(
            "{}\n[[sweep.variants]]\nname = \"fast\"\nlr = 0.1\n",
            TINY.replace("ENV", "pointmass")
        ),
    )
    .unwrap();
    let o = cli(&["sweep", fixed.to_str().unwrap()], out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr"));
}

#[test]
fn summarize_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ne!(code(&cli(&["summarize", tmp.path().to_str().unwrap()], tmp.path())), 0);
}

#[test]
fn train_then_summarize_and_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), "pointmass");
    let o = cli(&["train", &cfg], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("tiny");
    let agent = run.join("seed3-agent0");
    for f in ["metrics.csv", "final.cpol", "agent.toml"] {
        assert!(agent.join(f).is_file(), "{f}");
    }
    assert!(run.join("config.toml").is_file());

    let sum_out = tmp.path().join("summary");
    let o = cli(&["summarize", run.to_str().unwrap()], &sum_out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(sum_out.join("summary.csv").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("tiny"));

    let ckpt = agent.join("final.cpol");
    let o = cli(
        &[
            "probe-conditioning",
            ckpt.to_str().unwrap(),
            "--env",
            "pointmass",
            "--states",
            "6",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6/6 estimates inside"));

    // Observation widths must agree.
    let o = cli(
        &["probe-conditioning", ckpt.to_str().unwrap(), "--env", "pendulum_lite"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn procgrid_levels_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("levels.csv");
    let o = cli(
        &[
            "make-levels",
            manifest.to_str().unwrap(),
            "--seen",
            "6",
            "--unseen",
            "4",
            "--master-seed",
            "1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("seen,")).count(), 6);

    let cfg = tiny(tmp.path(), "procgrid");
    assert_eq!(code(&cli(&["train", &cfg], tmp.path())), 0);
    let agent = tmp.path().join("tiny/seed3-agent0");
    assert!(agent.join("eval.csv").is_file());
    let o = cli(
        &[
            "eval",
            agent.join("final.cpol").to_str().unwrap(),
            "--levels",
            manifest.to_str().unwrap(),
            "--episodes",
            "1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("seen") && stdout.contains("unseen") && stdout.contains("success_rate="));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), "pointmass");
    assert_eq!(code(&cli(&["train", &cfg, "--seed", "11"], tmp.path())), 0);
    assert!(tmp.path().join("tiny/seed11-agent0/final.cpol").is_file());
    assert!(!tmp.path().join("tiny/seed3-agent0").exists());
}
