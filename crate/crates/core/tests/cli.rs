use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stgcsn::io::{manifest_path, read_checkpoint, read_feature_cache, read_mask};

const BIN: &str = env!("CARGO_BIN_EXE_stgcsn");

const CONFIG: &str = "\
synth_kind = disjoint_joints
synth_frames = 12
clip_len = 12
sample_len = 12
synth_train_per_class = 3
synth_test_per_class = 2
synth_classes = 3
js = 2
jt = 2
tau = 0.0
hidden = 16
epochs = 40
lr = 0.01
batch_size = 9
";

struct Env {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Env {
    fn new() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.cfg");
        fs::write(&config, CONFIG).unwrap();
        Env { _dir: dir, root, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN).args(args).arg("--config").arg(&self.config).output().unwrap()
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_owned()
    }

    fn synth(&self) {
        let out = self.run(&["synth", "--out", &self.path("data")]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn gradcheck_passes_with_exit_zero() {
    let out = Command::new(BIN).arg("gradcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("layers 1:") && text.contains("layers 2:"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn exit_codes() {
    let env = Env::new();
    // Usage errors.
    assert_eq!(env.run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(Command::new(BIN).output().unwrap().status.code(), Some(1));
    // Configuration errors name the field.
    let bad = env.run(&["train", "--set", "tau=-1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("tau"));
    let bad = env.run(&["train", "--set", "hidden=0"]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("hidden"));
    // Missing data.
    let missing = env.run(&["train", "--train-manifest", &env.path("nope.tsv"), "--out", &env.path("o")]);
    assert_eq!(missing.status.code(), Some(2));
    // Help is not an error.
    assert_eq!(Command::new(BIN).arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn failed_commands_write_nothing() {
    let env = Env::new();
    env.synth();
    let out_dir = env.root.join("o");
    let manifest = env.path("data/train.tsv");
    for args in [
        vec!["train", "--set", "epochs=x", "--train-manifest", &manifest],
        vec!["train", "--train-manifest", &manifest, "--mask", "/no/such/mask.txt"],
        vec!["prune", "--js", "50", "--jt", "50", "--layers", "3", "--train-manifest", &manifest],
        vec!["eval", "--test-manifest", &manifest],
    ] {
        let mut full = args.clone();
        let out = out_dir.to_str().unwrap().to_owned();
        full.extend(["--out", &out]);
        let o = env.run(&full);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(files_in(&out_dir).is_empty(), "{args:?} wrote {:?}", files_in(&out_dir));
    }
}

#[test]
fn synth_is_deterministic() {
    let env = Env::new();
    for d in ["a", "b"] {
        assert!(env.run(&["synth", "--seed", "5", "--out", &env.path(d)]).status.success());
    }
    let a = fs::read_to_string(env.root.join("a/train/c01_s0002.txt")).unwrap();
    let b = fs::read_to_string(env.root.join("b/train/c01_s0002.txt")).unwrap();
    assert_eq!(a, b);
    assert_eq!(fs::read_to_string(env.root.join("a/train.tsv")).unwrap().lines().count(), 9);
    assert_eq!(fs::read_to_string(env.root.join("a/test.tsv")).unwrap().lines().count(), 6);
}

#[test]
fn prune_at_zero_keeps_the_whole_tree() {
    let env = Env::new();
    env.synth();
    let o = env.run(&["prune", "--train-manifest", &env.path("data/train.tsv"), "--out", &env.path("o")]);
    assert!(o.status.success());
    let report = stdout(&o);
    assert!(report.contains("nodes_before\t21\n"), "{report}");
    assert!(report.contains("nodes_after\t21\n"), "{report}");
    assert!(report.contains("layer_2\t16\n"), "{report}");
    assert_eq!(read_mask(&env.root.join("o/mask.txt")).unwrap().len(), 21);

    let o = env.run(&["prune", "--tau", "1", "--train-manifest", &env.path("data/train.tsv"), "--out", &env.path("p")]);
    assert!(stdout(&o).contains("nodes_after\t1\n"));
}

#[test]
fn train_eval_extract_pipeline() {
    let env = Env::new();
    env.synth();
    let train = env.path("data/train.tsv");
    let out = env.path("o");
    let o = env.run(&["train", "--train-manifest", &train, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        files_in(&env.root.join("o")),
        ["checkpoint.bin", "config.txt", "mask.txt", "train.log"]
    );
    let log = fs::read_to_string(env.root.join("o/train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 40);
    let model = read_checkpoint(&env.root.join("o/checkpoint.bin")).unwrap();
    assert_eq!(model.params.head.classes(), 3);

    // The training set is fitted exactly, so evaluating on it is an oracle.
    let o = env.run(&["eval", "--test-manifest", &train, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "accuracy 1.0000\n");
    let confusion = fs::read_to_string(env.root.join("o/confusion.txt")).unwrap();
    assert_eq!(confusion, "3\t0\t0\n0\t3\t0\n0\t0\t3\n");

    // Evaluating with a different variant than the checkpoint was trained
    // for is a shape error.
    let o = env.run(&["eval", "--variant", "fixed_only", "--test-manifest", &train, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));

    let o = env.run(&["extract", "--train-manifest", &train, "--test-manifest", &env.path("data/test.tsv"), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cache = env.root.join("o/features_train.bin");
    let records = read_feature_cache(&cache).unwrap();
    assert_eq!(records.len(), 9);
    assert!(records.iter().enumerate().all(|(i, r)| r.0 == i));
    let manifest = fs::read_to_string(manifest_path(&cache)).unwrap();
    let nodes = manifest.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(nodes, 21 + 20);
    assert_eq!(records[0].1.len(), nodes * 3 * 21);
    assert_eq!(read_feature_cache(&env.root.join("o/features_test.bin")).unwrap().len(), 6);
}

#[test]
fn fixed_only_extraction_needs_no_checkpoint() {
    let env = Env::new();
    env.synth();
    let o = env.run(&["extract", "--variant", "fixed_only", "--train-manifest", &env.path("data/train.tsv"), "--out", &env.path("o")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_feature_cache(&env.root.join("o/features_train.bin")).unwrap();
    assert_eq!(records[0].1.len(), 21 * 3 * 21);
}

#[test]
fn ablation_table_is_reproducible() {
    let env = Env::new();
    env.synth();
    let args = |out: &str| {
        vec![
            "ablate".to_owned(),
            "--deterministic".into(),
            "--epochs".into(),
            "3".into(),
            "--train-manifest".into(),
            env.path("data/train.tsv"),
            "--test-manifest".into(),
            env.path("data/test.tsv"),
            "--out".into(),
            env.path(out),
        ]
    };
    let run = |out: &str| {
        let a = args(out);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let o = env.run(&refs);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, name) in lines[1..].iter().zip(["fixed_only", "trainable_only", "no_complement", "full"]) {
        assert!(line.starts_with(name), "{line}");
    }
    assert!(lines.iter().all(|l| l.len() == lines[0].len()), "columns not aligned:\n{first}");
}

#[test]
fn flags_override_config_file() {
    let env = Env::new();
    env.synth();
    let o = env.run(&[
        "train",
        "--set",
        "epochs=2",
        "--epochs",
        "1",
        "--variant",
        "fixed_only",
        "--train-manifest",
        &env.path("data/train.tsv"),
        "--out",
        &env.path("o"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = fs::read_to_string(env.root.join("o/config.txt")).unwrap();
    assert!(config.contains("epochs = 1\n") && config.contains("variant = fixed_only\n"), "{config}");
    assert!(stdout(&o).contains("variant fixed_only"));
}
