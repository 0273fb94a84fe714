//! The `repbank` binary end to end on small synthetic corpora.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use repbank::engine::{average_features, init_decoders};
use repbank::mlp::encode_stack;
use repbank::store::{
    encode_features, load_ensemble, write_labels, write_matrix, LabelVector, Manifest, SplitFiles, SplitTable,
};
use repbank::{Matrix, Split, TrainConfig};
use serde_json::Value;

fn repbank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repbank"))
        .args(args)
        .env_remove("ENSEMBLE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = repbank(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small corpus and returns its manifest path.
fn corpus(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("corpus");
    let mut args = vec![
        "synth", "--out", s(&out), "--n-train", "120", "--n-test", "40", "--dim", "12", "--models", "2",
        "--num-classes", "4",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("manifest.json")
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn train_writes_checkpoint_bank_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&["train", "--manifest", s(&m), "--out", s(&run), "--batch-size", "16", "--lr", "2e-3"]);
    for f in ["decoders.mlpw", "train_bank.fstr", "train_log.jsonl"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = lines(&run.join("train_log.jsonl"));
    assert_eq!(log.len(), 50);
    let loss = |v: &Value| v["mean_loss"].as_f64().unwrap();
    assert!(loss(&log[49]) < loss(&log[0]));
    let side: Value = serde_json::from_slice(&read(run.join("decoders.json"))).unwrap();
    assert_eq!((side["models"].as_u64(), side["dim"].as_u64()), (Some(2), Some(12)));
    ok(&["validate", s(&run.join("decoders.mlpw")), s(&run.join("train_bank.fstr")), s(&m)]);
}

#[test]
fn missing_manifest_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = repbank(&["train", "--manifest", "/no/such/manifest.json", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/manifest.json"));
    assert_eq!(repbank(&["train", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(repbank(&["train", "--lr", "abc"]).status.code(), Some(2));
}

#[test]
fn zero_epochs_keep_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&["train", "--manifest", s(&m), "--out", s(&run), "--epochs", "0", "--infer-epochs", "0"]);
    let manifest = Manifest::load(&m).unwrap();
    let (train, _) = load_ensemble(&manifest, Split::Train).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let init = init_decoders(2, 12, &cfg).unwrap();
    assert_eq!(read(run.join("decoders.mlpw")), encode_stack(&init));
    let avg = encode_features(&average_features(&train).unwrap()).unwrap();
    assert_eq!(read(run.join("train_bank.fstr")), avg);

    // Inference with no epochs reproduces the averaging baseline file.
    ok(&["infer", "--manifest", s(&m), "--out", s(&run), "--checkpoint", s(&run.join("decoders.mlpw"))]);
    let (test, _) = load_ensemble(&manifest, Split::Test).unwrap();
    let baseline = dir.path().join("avg.fstr");
    write_matrix(&average_features(&test).unwrap(), &baseline).unwrap();
    assert_eq!(read(run.join("test_reps.fstr")), read(&baseline));
}

#[test]
fn infer_leaves_checkpoint_alone_and_rejects_other_dims() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&["train", "--manifest", s(&m), "--out", s(&run), "--epochs", "4", "--batch-size", "32"]);
    let ckpt = run.join("decoders.mlpw");
    let before = read(&ckpt);
    ok(&["infer", "--manifest", s(&m), "--out", s(&run), "--checkpoint", s(&ckpt), "--infer-epochs", "3"]);
    assert_eq!(read(&ckpt), before);
    assert_eq!(lines(&run.join("test_infer_log.jsonl")).len(), 3);

    let wide = dir.path().join("wide");
    ok(&["synth", "--out", s(&wide), "--dim", "16", "--models", "2", "--n-train", "30", "--n-test", "10"]);
    let out = repbank(&[
        "infer", "--manifest", s(&wide.join("manifest.json")), "--out", s(&run), "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn transfer_mode_infers_both_splits_of_another_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(&dir.path().join("a"), &["--seed", "1", "--view-seed", "7"]);
    let b = corpus(&dir.path().join("b"), &["--seed", "2", "--view-seed", "7"]);
    let run_a = dir.path().join("run_a");
    ok(&["train", "--manifest", s(&a), "--out", s(&run_a), "--epochs", "6", "--batch-size", "16"]);
    let ckpt = run_a.join("decoders.mlpw");
    let run_b = dir.path().join("run_b");
    for split in ["train", "test"] {
        ok(&["infer", "--manifest", s(&b), "--out", s(&run_b), "--checkpoint", s(&ckpt), "--split", split]);
    }
    ok(&["eval", "--manifest", s(&b), "--out", s(&run_b), "--run", s(&run_b), "--mode", "transfer-infer",
        "--checkpoint", s(&ckpt)]);
    let rows = lines(&run_b.join("eval.jsonl"));
    assert_eq!(rows[0]["method"], "Ours");
}

#[test]
fn eval_reports_every_method_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &["--mode", "complementary", "--models", "3"]);
    let run = dir.path().join("run");
    let args = |out: &Path| {
        vec![
            "--manifest".to_string(),
            s(&m).to_string(),
            "--out".to_string(),
            s(out).to_string(),
            "--epochs".to_string(),
            "6".to_string(),
            "--batch-size".to_string(),
            "16".to_string(),
        ]
    };
    let with = |cmd: &str, extra: &[&str], out: &Path| {
        let mut v = vec![cmd.to_string()];
        v.extend(args(out));
        v.extend(extra.iter().map(|x| x.to_string()));
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    };
    with("train", &[], &run);
    let ckpt = run.join("decoders.mlpw");
    with("infer", &["--checkpoint", s(&ckpt)], &run);
    with("eval", &["--run", s(&run)], &run);
    let first = read(run.join("eval.jsonl"));
    with("eval", &["--run", s(&run)], &run);
    assert_eq!(read(run.join("eval.jsonl")), first);

    let rows = lines(&run.join("eval.jsonl"));
    assert_eq!(rows.len(), 3 + 3);
    assert!(rows.iter().all(|r| r["protocol"] == "knn" && r["k"] == 20));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r["accuracy"].as_f64().unwrap())));
    assert_eq!(rows[0]["method"], "Ours");

    with("eval", &["--run", s(&run), "--probe", "--probe-epochs", "5"], &run);
    let rows = lines(&run.join("eval.jsonl"));
    assert_eq!(rows.len(), 2 * (3 + 3));
    assert_eq!(rows.iter().filter(|r| r["protocol"] == "linear").count(), 6);

    let base = dir.path().join("base");
    with("eval", &["--mode", "baseline-only"], &base);
    let rows = lines(&base.join("eval.jsonl"));
    assert_eq!(rows.len(), 2 + 3);
    assert!(rows.iter().all(|r| r["method"] != "Ours"));

    let out = repbank(&["eval", "--manifest", s(&m), "--out", s(&base)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    let text = format!(
        r#"{{"manifest": "{}", "out": "{}", "epochs": 3, "batch_size": 32}}"#,
        s(&m),
        s(&run)
    );
    std::fs::write(&cfg, text).unwrap();
    ok(&["train", "--config", s(&cfg), "--epochs", "2"]);
    assert_eq!(lines(&run.join("train_log.jsonl")).len(), 2);
    let side: Value = serde_json::from_slice(&read(run.join("decoders.json"))).unwrap();
    assert_eq!(side["config"]["batch_size"], 32);

    std::fs::write(&cfg, r#"{"epoch": 3}"#).unwrap();
    assert_eq!(repbank(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn sweeps_record_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let out = dir.path().join("sweep");
    let common = ["--manifest", s(&m), "--out", s(&out), "--epochs", "2", "--infer-epochs", "2"];
    let sweep = |extra: &[&str]| {
        let mut v = vec!["sweep"];
        v.extend_from_slice(&common);
        v.extend_from_slice(extra);
        ok(&v);
        lines(&out.join("sweep.jsonl"))
    };

    let rows = sweep(&["--axis", "batch", "--values", "64,128", "--lr", "3e-4", "--base-batch", "256"]);
    let lrs: Vec<f64> = rows.iter().map(|r| r["lr"].as_f64().unwrap()).collect();
    assert!((lrs[0] - 7.5e-5).abs() < 1e-18 && (lrs[1] - 1.5e-4).abs() < 1e-18, "{lrs:?}");

    let rows = sweep(&["--axis", "depth", "--values", "1,2,3,4"]);
    assert_eq!(rows.len(), 4);
    for (r, d) in rows.iter().zip(1..) {
        assert_eq!((r["depth"].as_u64(), r["status"].as_str()), (Some(d), Some("ok")));
        assert_eq!(r["results"][0]["method"], "Ours");
    }

    // A failing cycle is recorded and the sweep carries on.
    let rows = sweep(&["--axis", "batch", "--values", "0,32"]);
    assert_eq!(rows[0]["status"], "error");
    assert_eq!(rows[0]["exit_code"], 2);
    assert_eq!(rows[1]["status"], "ok");

    let mut v = vec!["sweep"];
    v.extend_from_slice(&common);
    v.extend_from_slice(&["--axis", "lr", "--values", ""]);
    assert_eq!(repbank(&v).status.code(), Some(2));
}

/// A corpus in which every row of every split is the same unit vector.
fn identity_corpus(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let d = 6;
    let row = vec![1.0 / (d as f64).sqrt(); d];
    let rows: Vec<Vec<f64>> = vec![row; 10];
    write_matrix(&Matrix::from_rows(&rows).unwrap(), dir.join("f.fstr")).unwrap();
    write_labels(&LabelVector::new([0, 1].repeat(5), 2).unwrap(), dir.join("l.lbls")).unwrap();
    let files = SplitFiles {
        features: vec!["f.fstr".into()],
        labels: "l.lbls".into(),
    };
    let manifest = Manifest {
        corpus: "identity".into(),
        dim: d,
        models: vec!["only".into()],
        splits: SplitTable {
            train: files.clone(),
            test: files,
        },
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

#[test]
fn analyze_emits_paired_spectra_and_medians() {
    let dir = tempfile::tempdir().unwrap();
    let m = identity_corpus(&dir.path().join("id"));
    let out = dir.path().join("an");
    ok(&["analyze", "--manifest", s(&m), "--out", s(&out), "--epochs", "2", "--batch-size", "5"]);
    let sim: Value = serde_json::from_slice(&read(out.join("similarity.json"))).unwrap();
    let methods = sim["methods"].as_array().unwrap();
    assert_eq!(methods[0]["method"], "Averaging");
    for m in methods {
        assert!(m["median"].is_number());
        for v in m["normalized"].as_array().unwrap() {
            assert!((v.as_f64().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    let m = corpus(dir.path(), &[]);
    ok(&["analyze", "--manifest", s(&m), "--out", s(&out), "--epochs", "4", "--batch-size", "16"]);
    let spec: Value = serde_json::from_slice(&read(out.join("spectrum.json"))).unwrap();
    let paired = spec["paired"].as_array().unwrap();
    assert_eq!(paired.len(), 12);
    for w in paired.windows(2) {
        let (a, b) = (w[0].as_array().unwrap(), w[1].as_array().unwrap());
        for (x, y) in a.iter().zip(b) {
            assert!(x.as_f64().unwrap() >= y.as_f64().unwrap());
        }
    }
    assert!(spec["constrained"]["entropy"].is_number());
    let bank = repbank::store::read_matrix(out.join("constrained_bank.fstr")).unwrap();
    assert!(bank.as_slice().iter().all(|&x| x >= 0.0));
}

#[test]
fn validate_reports_each_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), &[]);
    let root = m.parent().unwrap();
    let stdout = ok(&[
        "validate",
        s(&m),
        s(&root.join("train_view0.fstr")),
        s(&root.join("test_labels.lbls")),
    ]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok")).count(), 3);

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"nothing here").unwrap();
    let out = repbank(&["validate", s(&m), s(&junk)]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL") && stdout.contains("ok"));
}
