//! End-to-end tests against the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use treeps_cli::export::{MetricsDocument, PolicyDocument, TreeDocument};
use treeps_cli::manifest::RunManifest;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treeps"));
    cmd.env_remove("TREEPS_SEED");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn pipeline_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let roll_dir = dir.path().join("roll");
    let train_dir = dir.path().join("train");

    run_ok(&[
        "gen-corpus",
        "--out",
        corpus_dir.to_str().unwrap(),
        "--seed",
        "11",
        "--chains",
        "4",
    ]);
    let corpus_path = corpus_dir.join("corpus.json");
    assert!(corpus_path.exists());
    let manifest = read_manifest(&corpus_dir);
    assert_eq!(manifest.command, "gen-corpus");
    assert_eq!(manifest.seed, 11);
    // every listed artifact exists with the recorded size
    for entry in &manifest.outputs {
        let len = fs::metadata(corpus_dir.join(&entry.path)).unwrap().len();
        assert_eq!(len, entry.bytes, "{} size mismatch", entry.path);
    }

    run_ok(&[
        "rollout",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--out",
        roll_dir.to_str().unwrap(),
        "--policy",
        "planted",
        "--seed",
        "3",
    ]);
    let tree: TreeDocument =
        serde_json::from_str(&fs::read_to_string(roll_dir.join("tree.json")).unwrap()).unwrap();
    assert!(tree.nodes.len() > 1);
    assert_eq!(tree.layers[0], vec![0]);
    let dot = fs::read_to_string(roll_dir.join("tree.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    let jsonl = fs::read_to_string(roll_dir.join("experience.jsonl")).unwrap();
    let records = treeps::experience::read_jsonl(jsonl.as_bytes()).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.question_id == tree.question_id));
    let manifest = read_manifest(&roll_dir);
    assert_eq!(manifest.command, "rollout");
    for entry in &manifest.outputs {
        let len = fs::metadata(roll_dir.join(&entry.path)).unwrap().len();
        assert_eq!(len, entry.bytes, "{} size mismatch", entry.path);
    }

    run_ok(&[
        "train",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--seed",
        "5",
        "--iterations",
        "3",
    ]);
    let metrics: MetricsDocument =
        serde_json::from_str(&fs::read_to_string(train_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.iterations.len(), 3);
    assert!(metrics.final_mean_reward.is_finite());
    let policy: PolicyDocument =
        serde_json::from_str(&fs::read_to_string(train_dir.join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy.hop_count, 2);
    assert!(!policy.params.logits.is_empty());

    // a trained policy file drives rollouts
    let roll2 = dir.path().join("roll2");
    run_ok(&[
        "rollout",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--out",
        roll2.to_str().unwrap(),
        "--policy-file",
        train_dir.join("policy.json").to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(roll2.join("tree.json").exists());

    // export-tree reproduces the rollout's own dot rendering
    let copy = dir.path().join("copy.dot");
    run_ok(&[
        "export-tree",
        "--tree",
        roll_dir.join("tree.json").to_str().unwrap(),
        "--out",
        copy.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&copy).unwrap(), fs::read(roll_dir.join("tree.dot")).unwrap());
}

#[test]
fn config_file_and_flags_layer_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    fs::write(
        &config_path,
        "[env]\nnum_chains = 3\nseed = 21\n\n[rollout]\nrollout_budget = 6\nretention_budget = 3\n",
    )
    .unwrap();
    let corpus_dir = dir.path().join("corpus");
    run_ok(&[
        "gen-corpus",
        "--out",
        corpus_dir.to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
    ]);
    let corpus = fs::read_to_string(corpus_dir.join("corpus.json")).unwrap();
    let corpus: serde_json::Value = serde_json::from_str(&corpus).unwrap();
    assert_eq!(corpus["config"]["num_chains"], 3);
    assert_eq!(read_manifest(&corpus_dir).seed, 21);

    // flag beats file
    let corpus2 = dir.path().join("corpus2");
    run_ok(&[
        "gen-corpus",
        "--out",
        corpus2.to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(read_manifest(&corpus2).seed, 99);

    // rollout picks up the budget from the file
    let roll = dir.path().join("roll");
    run_ok(&[
        "rollout",
        "--corpus",
        corpus_dir.join("corpus.json").to_str().unwrap(),
        "--out",
        roll.to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--policy",
        "planted",
    ]);
    let tree: TreeDocument =
        serde_json::from_str(&fs::read_to_string(roll.join("tree.json")).unwrap()).unwrap();
    let depth1 = tree.nodes.iter().filter(|n| n.depth == 1).count();
    assert_eq!(depth1, 6);
}

#[test]
fn seed_env_var_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let via_env = dir.path().join("via-env");
    let via_flag = dir.path().join("via-flag");
    let out = bin()
        .args(["gen-corpus", "--out", via_env.to_str().unwrap(), "--seed", "7"])
        .env("TREEPS_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    run_ok(&["gen-corpus", "--out", via_flag.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(read_manifest(&via_env).seed, 9);
    assert_eq!(
        fs::read(via_env.join("corpus.json")).unwrap(),
        fs::read(via_flag.join("corpus.json")).unwrap()
    );

    let out = bin()
        .args(["gen-corpus", "--out", dir.path().join("x").to_str().unwrap()])
        .env("TREEPS_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    run_ok(&["gen-corpus", "--out", corpus_dir.to_str().unwrap(), "--chains", "2"]);
    let corpus = corpus_dir.join("corpus.json");

    // missing corpus file
    let out = bin()
        .args([
            "rollout",
            "--corpus",
            dir.path().join("nope.json").to_str().unwrap(),
            "--out",
            dir.path().join("r").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);

    // unknown question id
    let out = bin()
        .args([
            "rollout",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            dir.path().join("r2").to_str().unwrap(),
            "--question",
            "977",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("977"));

    // invalid engine config
    let out = bin()
        .args([
            "rollout",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            dir.path().join("r3").to_str().unwrap(),
            "--budget",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);

    // mistyped key in the config file
    let bad_toml = dir.path().join("bad.toml");
    fs::write(&bad_toml, "[rollout]\nrollout_budgett = 4\n").unwrap();
    let out = bin()
        .args([
            "gen-corpus",
            "--out",
            dir.path().join("c").to_str().unwrap(),
            "--config",
            bad_toml.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);

    // unknown flag follows the same contract
    let out = bin().args(["rollout", "--bogus"]).output().unwrap();
    assert_eq!(exit_code(&out), 1);

    // hop count outside the supported range
    let out = bin()
        .args([
            "gen-corpus",
            "--out",
            dir.path().join("c2").to_str().unwrap(),
            "--hops",
            "9",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    run_ok(&["gen-corpus", "--out", corpus_dir.to_str().unwrap(), "--chains", "2"]);

    // nothing listens on this port, so the remote policy cannot draft a step
    let out = bin()
        .args([
            "rollout",
            "--corpus",
            corpus_dir.join("corpus.json").to_str().unwrap(),
            "--out",
            dir.path().join("r").to_str().unwrap(),
            "--remote-url",
            "http://127.0.0.1:9/v1/completions",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    run_ok(&["gen-corpus", "--out", corpus_dir.to_str().unwrap(), "--chains", "3"]);
    let corpus = corpus_dir.join("corpus.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "rollout",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "17",
            "--policy",
            "planted",
        ]);
    }
    for name in ["tree.json", "tree.dot", "experience.jsonl"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}
