use std::path::Path;
use std::process::{Command, Output};

use navex::metrics::RunSummary;
use navex::runlog::RunLog;
use navex::ChangeSchedule;
use navex_harness::{generate_env, EnvSpec};

fn explore(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_explore"));
    cmd.args(args).env_remove("EXPLORE_LOG_DIR").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, horizon: u64, ceiling: u64) -> String {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
            "env": {{"kind": "chain", "n": 3, "noise": 0.2}},
            "changes": [{{"at": 150000, "source": "perturb",
                          "perturbations": [{{"kind": "break_edge", "state": 0, "action": 1}}]}}],
            "algorithm": {{"delta": 0.1, "eps": 1.0, "L": 2.0, "c1": 1.0, "c2": 1.0,
                           "unsound_constants": true, "step_ceiling": {ceiling}}},
            "horizon": {horizon},
            "seeds": [0, 1],
            "log_detail": "steps"
        }}"#
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_readable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 200_000, 100_000_000);
    let out_dir = dir.path().join("out");
    let out = explore(
        &[
            "run",
            "--config",
            &config,
            "--seeds",
            "3,4",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summaries: Vec<RunSummary> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summaries.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 4]);
    for s in &summaries {
        let replica = out_dir.join(format!("replica-{:04}", s.seed));
        let log = RunLog::load(replica.join("events.jsonl")).unwrap();
        assert_eq!(log.total_steps(), 200_000);
        assert_eq!(log.header.seed, s.seed);
        assert!(log.header.unsound_constants && s.unsound_constants);
        assert_eq!(s.change_times, vec![150_000]);
        assert_eq!(s.f, 2);

        let mut csv = csv::Reader::from_path(replica.join("exploration.csv")).unwrap();
        assert_eq!(csv.headers().unwrap(), vec!["t", "cumulative_exploration"]);
        let rows: Vec<(u64, u64)> = csv.deserialize().map(Result::unwrap).collect();
        assert!(rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(rows.last().unwrap(), &(200_000, s.exploration_steps));

        let mut steps = csv::Reader::from_path(replica.join("steps.csv")).unwrap();
        assert_eq!(
            steps.headers().unwrap(),
            vec![
                "t",
                "round",
                "phase",
                "hypothesis_size",
                "is_exploration",
                "unit",
                "state",
                "action"
            ]
        );
        assert_eq!(steps.records().count(), 200_000);
    }
    assert!(out_dir.join("config.json").exists());
}

#[test]
fn log_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 20_000, 100_000_000);
    let logs = dir.path().join("from-env");
    let out = explore(
        &["run", "--config", &config, "--seeds", "0"],
        &[("EXPLORE_LOG_DIR", &logs)],
    );
    assert!(out.status.success());
    assert!(logs.join("replica-0000").join("events.jsonl").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = explore(&["run", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"env": {"kind": "chain", "n": 3}, "algorithm": {"delta": 0.1, "eps": 1.0, "L": 2.0, "c1": 1.0}, "horizon": 10}"#).unwrap();
    let out = explore(&["run", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2), "scaled constants without the flag");

    let config = write_config(dir.path(), 50_000, 1_000);
    let out_dir = dir.path().join("halted");
    let out = explore(&["run", "--config", &config, "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("HALTED"));
}

#[test]
fn oracle_prints_the_reachable_sets() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = generate_env(
        &EnvSpec::Chain {
            n: 4,
            actions: 2,
            noise: 0.0,
        },
        0,
    )
    .unwrap();
    let path = dir.path().join("chain.json");
    ChangeSchedule::stationary(kernel).save(&path).unwrap();
    let out = explore(&["oracle", "--kernel", path.to_str().unwrap(), "--L", "2"], &[]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("S_L  = {0, 1, 2}"), "{text}");
    assert!(text.contains("S→_L = {0, 1, 2}"), "{text}");

    let out = explore(
        &[
            "oracle",
            "--kernel",
            path.to_str().unwrap(),
            "--L",
            "2",
            "--segment",
            "1",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_lemmas_and_bound() {
    let out = explore(&["verify-lemmas", "--q-max", "400", "--b-max", "20"], &[]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).matches(": ok").count(), 2);

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 1_000, 100_000_000);
    let out = explore(&["bound", "--config", &config], &[]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("\"total_bound\""));
}
