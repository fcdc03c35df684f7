use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
replications = 2
instance.items = [3]
instance.dim = 3
instance.pool_size = 50
plan.scale = [300]
plan.patterns = ["Spike"]
planning.steps = 20
planning.user_sample = 30

[[strategy]]
name = "eps_greedy"
grid = [0.05, 0.5]

[[strategy]]
name = "planner"
"#;

fn schedopt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schedopt"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCHEDOPT_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_reports_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("results");
    let res = schedopt(
        &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in [
        "regret_table.csv",
        "schedules.csv",
        "convergence.csv",
        "config.resolved.toml",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let table = fs::read_to_string(out.join("regret_table.csv")).unwrap();
    assert!(table.starts_with("strategy,K,N,pattern,mean_regret,se\n"));
    assert!(table.contains("eps_greedy*,3,300,Spike,"));
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("pool_size = 50"));
    assert!(resolved.contains("eval_paths"));

    // rerunning the resolved echo reproduces the table byte for byte
    let again = dir.path().join("again");
    let res = schedopt(
        &[
            "run",
            "--config",
            out.join("config.resolved.toml").to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(res.status.success());
    assert_eq!(
        fs::read(out.join("regret_table.csv")).unwrap(),
        fs::read(again.join("regret_table.csv")).unwrap()
    );
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let env_dir = dir.path().join("from_env");
    let flag_dir = dir.path().join("from_flag");
    let res = Command::new(env!("CARGO_BIN_EXE_schedopt"))
        .args(["run", "--config", &cfg])
        .current_dir(dir.path())
        .env("SCHEDOPT_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(env_dir.join("regret_table.csv").exists());
    let res = Command::new(env!("CARGO_BIN_EXE_schedopt"))
        .args(["run", "--config", &cfg, "--out", flag_dir.to_str().unwrap()])
        .current_dir(dir.path())
        .env("SCHEDOPT_OUT", dir.path().join("unused"))
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(flag_dir.join("regret_table.csv").exists());
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn bad_config_reports_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "replications = -4\n");
    let res = schedopt(&["run", "--config", &cfg], dir.path());
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("replications"), "{err}");

    let cfg = write_config(dir.path(), "[[strategy]]\nname = \"ucb\"\n");
    let res = schedopt(&["run", "--config", &cfg], dir.path());
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("ucb"));
}

#[test]
fn solve_prints_one_rate_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let res = schedopt(&["solve", "--config", &cfg], dir.path());
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = String::from_utf8_lossy(&res.stdout);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("eps_")).count(),
        5,
        "{text}"
    );
    assert!(text.contains("objective = "));

    let res = schedopt(
        &["solve", "--config", &cfg, "--strategy", "simple_etc"],
        dir.path(),
    );
    assert!(!res.status.success());
}

#[test]
fn simulate_writes_an_interaction_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sim");
    let res = schedopt(
        &[
            "simulate",
            "--config",
            &cfg,
            "--strategy",
            "eps_greedy:0.2",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let log = fs::read_to_string(out.join("interactions.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next(),
        Some("period,user,action,reward,explored,running_regret")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let sizes = stdout
        .split("sizes [")
        .nth(1)
        .and_then(|s| s.split(']').next())
        .unwrap();
    let total: usize = sizes.split(", ").map(|s| s.parse::<usize>().unwrap()).sum();
    assert_eq!(rows.len(), total);

    let res = schedopt(
        &["simulate", "--config", &cfg, "--strategy", "eps_greedy:abc"],
        dir.path(),
    );
    assert!(!res.status.success());
}

#[test]
fn check_verb_passes() {
    let dir = tempfile::tempdir().unwrap();
    let res = schedopt(&["check", "--seed", "5"], dir.path());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{text}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        4,
        "{text}"
    );
}
