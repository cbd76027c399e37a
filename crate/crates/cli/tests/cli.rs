use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[ppo]
hidden_dims = [16]
n_steps = 256
batch_size = 64
n_epochs = 2
total_steps = 512

[suite]
count = 6
test_count = 4
size_range = [10, 40]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_passgym"))
            .current_dir(self.dir.path())
            .env_remove("PASSGYM_SEED")
            .arg("--config")
            .arg("run.toml")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn mg_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mg"))
        .count()
}

#[test]
fn gen_is_repeatable_and_manifest_matches_files() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen", "--seed", "2", "--out", "a"]);
    ws.ok(&["gen", "--seed", "2", "--out", "b"]);
    for part in ["train", "test"] {
        assert_eq!(
            dir_snapshot(&ws.path(&format!("a/{part}"))),
            dir_snapshot(&ws.path(&format!("b/{part}")))
        );
    }
    ws.ok(&["gen", "--seed", "2", "--count", "3", "--out", "a"]);
    let manifest = fs::read_to_string(ws.path("a/train/manifest")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.is_empty()).count(), 3);
    assert_eq!(mg_count(&ws.path("a/train")), 3);
}

#[test]
fn overlapping_seed_ranges_fail_before_writing() {
    let config = format!("{SMALL}train_seed_range = [0, 1000]\ntest_seed_range = [500, 1500]\n");
    let ws = Workspace::new(&config);
    let out = ws.run(&["gen", "--out", "suite"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
    assert!(!ws.path("suite").exists());
}

#[test]
fn show_and_usage_exit_codes() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen", "--out", "s"]);
    let graph = fs::read_dir(ws.path("s/test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "mg"))
        .unwrap();
    let shown = ws.ok(&["show", graph.to_str().unwrap()]);
    assert!(shown.contains("op_count"));

    assert_eq!(code(&ws.run(&["show", "missing.mg"])), 2);
    fs::write(ws.path("bad.mg"), "graph g {\n  %0 = frobnicate()\n}\n").unwrap();
    assert_eq!(code(&ws.run(&["show", "bad.mg"])), 2);
    assert_eq!(code(&ws.run(&["show"])), 1);
    assert_eq!(code(&ws.run(&["train", "--algo", "sarsa"])), 1);

    let listing = ws.ok(&["catalog", "list"]);
    assert_eq!(listing.lines().filter(|l| !l.trim().is_empty()).count(), 12);
}

fn log_meta(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["meta"].clone()
}

#[test]
fn train_eval_optimize_round() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen", "--seed", "1", "--out", "s"]);

    ws.ok(&[
        "train",
        "--suite",
        "s/train",
        "--seed",
        "3",
        "--checkpoint",
        "plain.json",
        "--log",
        "plain.jsonl",
    ]);
    ws.ok(&[
        "train",
        "--suite",
        "s/train",
        "--seed",
        "3",
        "--shaping",
        "--checkpoint",
        "shaped.json",
        "--log",
        "shaped.jsonl",
    ]);
    ws.ok(&[
        "train",
        "--suite",
        "s/train",
        "--seed",
        "3",
        "--value-features",
        "--checkpoint",
        "vf.json",
        "--log",
        "vf.jsonl",
    ]);
    let plain = log_meta(&ws.path("plain.jsonl"));
    let shaped = log_meta(&ws.path("shaped.jsonl"));
    let vf = log_meta(&ws.path("vf.jsonl"));
    assert_eq!(plain["shaping"], false);
    assert_eq!(shaped["shaping"], true);
    assert_eq!(vf["policy_input_len"], plain["policy_input_len"]);
    assert_eq!(
        vf["value_input_len"].as_u64().unwrap(),
        plain["value_input_len"].as_u64().unwrap() + 2
    );

    ws.ok(&["eval", "--checkpoint", "plain.json", "--suite", "s/test", "--out", "r1"]);
    ws.ok(&["eval", "--checkpoint", "plain.json", "--suite", "s/test", "--out", "r2"]);
    for ext in ["csv", "json"] {
        assert_eq!(
            fs::read(ws.path(&format!("r1.{ext}"))).unwrap(),
            fs::read(ws.path(&format!("r2.{ext}"))).unwrap()
        );
    }
    ws.ok(&["eval", "--baseline", "greedy", "--suite", "s/test", "--out", "g"]);
    let diff = ws.ok(&["eval", "--compare", "r1.json", "g.json"]);
    assert!(!diff.is_empty());

    let graph = fs::read_dir(ws.path("s/test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "mg"))
        .unwrap();
    ws.ok(&[
        "optimize",
        "--checkpoint",
        "plain.json",
        "--verify",
        graph.to_str().unwrap(),
        "--out",
        "o.mg",
    ]);
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path("o.json")).unwrap()).unwrap();
    assert_eq!(sidecar["passes"].as_array().unwrap().len(), 16);
    assert!(sidecar["after"]["op_count"].as_u64().unwrap() <= sidecar["before"]["op_count"].as_u64().unwrap());
    assert!(ws.ok(&["show", "o.mg"]).contains("op_count"));
}

#[test]
fn seed_comes_from_environment_when_not_given() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen", "--seed", "4", "--out", "flag"]);
    let out = Command::new(env!("CARGO_BIN_EXE_passgym"))
        .current_dir(ws.dir.path())
        .env("PASSGYM_SEED", "4")
        .args(["--config", "run.toml", "gen", "--out", "env"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(dir_snapshot(&ws.path("flag/test")), dir_snapshot(&ws.path("env/test")));
}
