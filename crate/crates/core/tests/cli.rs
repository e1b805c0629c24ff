use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use onelearn::metrics::{validate_line, validate_text, MetricsEvent};
use onelearn::search::Winner;

const MAZE: &str = r#"
master_seed = 5

[net]
m = 9
p = 4
n = 1
o = 4
h = 16

[budgets]
unit = "env_steps"
c0 = 4000
lambda = 0.1
max_total_budget = 100000

[consolidation]
base_lr = 0.01
momentum = 0.9
clip_norm = 10.0
loss_weights = { action = 1.0, pred = 0.01, pr = 0.01 }

[paths]
trace_file = "out/traces.jsonl"
metrics_file = "out/metrics.jsonl"
checkpoint_dir = "out/ckpt"

[corner_curriculum]
width = 3
height = 3
"#;

const MOCK: &str = r#"
[net]
m = 3
p = 2
n = 1
o = 1
h = 4

[budgets]
unit = "evaluations"
c0 = 10
lambda = 1.0
max_total_budget = 200

[paths]
trace_file = "t.jsonl"
metrics_file = "m.jsonl"
checkpoint_dir = "ckpt"

[[tasks]]
task_id = "easy"
goal_index = 0
env = { kind = "mock", cells = 3, episode_len = 4, succeed = true }

[[tasks]]
task_id = "also_easy"
goal_index = 1
env = { kind = "mock", cells = 3, episode_len = 2, succeed = true }
"#;

fn onelearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onelearn")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn mock_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MOCK);
    let o = onelearn(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    let events = validate_text(&metrics).unwrap();
    assert!(!events.is_empty());
    let solves = events.iter().filter(|e| matches!(e, MetricsEvent::Solve { .. })).count();
    let consolidations = events.iter().filter(|e| matches!(e, MetricsEvent::Consolidation { .. })).count();
    assert_eq!((solves, consolidations), (2, 2));
    assert!(dir.path().join("t.jsonl").exists());
    assert!(dir.path().join("ckpt/final.ckpt").exists());
}

#[test]
fn missing_hidden_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MOCK.replace("h = 4\n", ""));
    let o = onelearn(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("net.h"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(onelearn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(onelearn(&["--help"]).status.code(), Some(0));
}

#[test]
fn identical_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), MAZE);
        let o = onelearn(&["run", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["out/metrics.jsonl", "out/traces.jsonl", "out/ckpt/final.ckpt"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = write_config(a.path(), MOCK);
    let cb = write_config(b.path(), MOCK);
    assert_eq!(onelearn(&["run", "--config", &ca]).status.code(), Some(0));
    assert_eq!(onelearn(&["run", "--config", &cb, "--seed", "99"]).status.code(), Some(0));
    let x = fs::read(a.path().join("ckpt/final.ckpt")).unwrap();
    let y = fs::read(b.path().join("ckpt/final.ckpt")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn maze_run_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MAZE);
    let o = onelearn(&["run", "--config", &cfg, "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traces = dir.path().join("out/traces.jsonl");
    let traces = traces.to_str().unwrap();
    let ckpt = dir.path().join("out/ckpt/final.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let metrics = fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap();
    let events = validate_text(&metrics).unwrap();
    let last_solved = events
        .iter()
        .rev()
        .find_map(|e| match e {
            MetricsEvent::Solve { task_id, .. } => Some(task_id.clone()),
            _ => None,
        })
        .expect("at least one task solved");

    // Relevant filter shows exactly the trials flagged in the file.
    let listing = onelearn(&["traces", traces, "--relevant", "true"]);
    assert_eq!(listing.status.code(), Some(0));
    let store = onelearn::trace::TraceStore::load(traces).unwrap();
    assert_eq!(stdout(&listing).lines().count() - 1, store.relevant_count());

    let first = store.trials()[0].trial_id.to_string();
    let dump = onelearn(&["traces", traces, "--dump", &first]);
    let trial: onelearn::trace::Trial = serde_json::from_str(&stdout(&dump)).unwrap();
    assert_eq!(&trial, &store.trials()[0]);

    let missing = onelearn(&["traces", traces, "--dump", "987654"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("987654"));

    // The most recently consolidated task is held by the final network.
    let eval = onelearn(&["eval", "--checkpoint", ckpt, "--config", &cfg, "--task", &last_solved]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let row = stdout(&eval).lines().nth(1).unwrap().to_string();
    let rate: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(rate >= 0.9, "{row}");

    let zero = onelearn(&["eval", "--checkpoint", ckpt, "--config", &cfg, "--trials", "0"]);
    assert_eq!(zero.status.code(), Some(1));

    let unknown = onelearn(&["eval", "--checkpoint", ckpt, "--config", &cfg, "--task", "nowhere"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr(&unknown).contains("nowhere"));

    let probe = onelearn(&["transfer-probe", "--checkpoint", ckpt, "--config", &cfg, "--task", &last_solved]);
    assert_eq!(probe.status.code(), Some(0), "{}", stderr(&probe));
    match validate_line(stdout(&probe).trim()).unwrap() {
        MetricsEvent::TransferProbe {
            winner, generations_one1, ..
        } => {
            assert_eq!(winner, Winner::One1Origin);
            assert_eq!(generations_one1, 1);
        }
        other => panic!("unexpected event {other:?}"),
    }
}

#[test]
fn untrained_checkpoint_fails_every_corner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), MAZE);
    let cfg = onelearn::config::ExperimentConfig::load(&cfg_path).unwrap();
    let (_, w) = onelearn::rnn::init_network(cfg.net.clone()).unwrap();
    let ckpt = dir.path().join("init.ckpt");
    onelearn::checkpoint::save_checkpoint(&ckpt, &cfg.net, &w).unwrap();
    let o = onelearn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg_path]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let rate: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(rate, 0.0, "{row}");
    }
}

#[test]
fn empty_trace_file_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    onelearn::trace::TraceStore::new(onelearn::trace::StoreHeader::new(2, 1, 1, 1))
        .save(&path)
        .unwrap();
    let o = onelearn(&["traces", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn corrupt_trace_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"format_version\":1,\"m\":1,\"p\":1,\"n\":1,\"o\":1}\nnot json\n").unwrap();
    let o = onelearn(&["traces", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}
