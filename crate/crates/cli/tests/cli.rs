use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use signflow::ingest::Split;
use signflow::pipeline::load_split_manifest;
use signflow::RunConfig;
use tempfile::TempDir;

const TINY: &str = r#"
seed = 3

[synth]
repetitions = 1
frames_min = 40
frames_max = 60
resolution = 32
transition_min = 3
transition_max = 8

[split]
fractions = [0.6, 0.2, 0.2]

[preprocess]
frames = 8
target_size = 32

[backbone]
pretrained = false
base_width = 4
stage_blocks = [1, 1]

[seq]
d_model = 8
num_layers = 1
num_heads = 2
ffn_dim = 16
lstm_hidden = 4
num_classes = 5

[train]
epochs = 2
patience = 2
batch_size = 8
lr0 = 1e-3
"#;

fn signflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signflow"))
        .current_dir(dir)
        .env_remove("SIGNFLOW_OUTPUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    let text = format!("{TINY}\n[paths]\ndata_root = \"{}\"\n", dir.path().join("data").display());
    fs::write(dir.path().join("tiny.toml"), text).unwrap();
    let out = signflow(dir.path(), &["generate", "-c", "tiny.toml", "-o", "gen"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn signer_independent_split_keeps_signers_disjoint() {
    let dir = workspace();
    let out = signflow(dir.path(), &["split", "-c", "tiny.toml", "--mode", "signer_independent", "--seed", "7", "-o", "split"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut cfg = RunConfig::load(&dir.path().join("tiny.toml")).unwrap();
    cfg.paths.data_root = dir.path().join("data");
    let manifest = load_split_manifest(&cfg).unwrap();
    let mut signers: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for split in Split::ALL {
        signers.insert(split, manifest.split_samples(split).iter().map(|r| r.signer_id.clone()).collect());
    }
    assert_eq!(signers.values().map(BTreeSet::len).sum::<usize>(), 6);
    let all: BTreeSet<&String> = signers.values().flatten().collect();
    assert_eq!(all.len(), 6);
    assert!(!signers[&Split::Test].is_empty());
}

#[test]
fn missing_data_root_exits_with_data_code() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere");
    let set = format!("paths.data_root={}", missing.display());
    let out = signflow(dir.path(), &["train", "--set", &set, "--set", "backbone.pretrained=false", "-o", "out"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let out = signflow(dir.path(), &["train", "--set", "seq.num_heads=7", "-o", "out"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = signflow(dir.path(), &["train", "--set", "seq.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_flag_beats_environment() {
    let dir = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_signflow"))
        .current_dir(dir.path())
        .env("SIGNFLOW_OUTPUT", dir.path().join("from_env"))
        .args(["split", "-c", "tiny.toml", "-o", "from_flag"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from_flag/run.json").is_file());
    assert!(!dir.path().join("from_env").exists());
}

#[test]
fn train_report_eval_and_rerun_from_record() {
    let dir = workspace();
    assert!(signflow(dir.path(), &["split", "-c", "tiny.toml"]).status.success());
    let out = signflow(dir.path(), &["train", "-c", "tiny.toml", "-o", "run1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["best.safetensors", "history.jsonl", "metrics.json", "confusion.csv", "report.txt", "run.json"] {
        assert!(dir.path().join("run1").join(f).is_file(), "missing {f}");
    }

    let out = signflow(dir.path(), &["report", "-c", "tiny.toml", "--run", "run1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["loss.svg", "accuracy.svg", "confusion.png"] {
        assert!(dir.path().join("run1").join(f).is_file(), "missing {f}");
    }

    let out = signflow(dir.path(), &["eval", "-c", "tiny.toml", "--checkpoint", "run1/best.safetensors", "-o", "eval"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("eval/metrics.json").is_file());
    let out = signflow(dir.path(), &["eval", "-c", "tiny.toml", "--checkpoint", "run1/absent.safetensors", "-o", "eval"]);
    assert_eq!(out.status.code(), Some(3));

    let out = signflow(dir.path(), &["train", "-c", "run1/run.json", "-o", "run2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["history.jsonl", "metrics.json"] {
        assert_eq!(
            fs::read(dir.path().join("run1").join(f)).unwrap(),
            fs::read(dir.path().join("run2").join(f)).unwrap(),
            "{f} differs on rerun"
        );
    }
}
