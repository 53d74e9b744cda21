use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn textrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textrec")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = textrec(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn config(d_model: usize) -> String {
    format!(
        r#"{{
        "data": {{"vocab": "vocab.txt", "pretrain": ["data/domain1"], "pretrain_valid": "data/domain1", "finetune": "data/domain1"}},
        "model": {{"d_model": {d_model}, "n_layers": 1, "n_heads": 2, "window": 8, "ffn_dim": 32, "max_tokens": 128,
                  "max_items": 10, "attr_token_cap": 16, "dropout": 0.0}},
        "train": {{"epochs": 1, "pretrain_batch_size": 16, "finetune_batch_size": 8, "lr": 0.001,
                  "patience": 5, "grad_clip": 1.0, "seed": 4}},
        "loss": {{"tau": 0.05, "lambda": 0.1}}
    }}"#
    )
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["make-synthetic", "--seed", "1", "--users", "30", "--out", "data"]);
    ok(p, &["build-vocab", "--items", "data/domain1/items.jsonl", "--out", "vocab.txt"]);
    dir
}

#[test]
fn vocabulary_matches_frequency_count() {
    let dir = prepared();
    let text = std::fs::read_to_string(dir.path().join("data/domain1/items.jsonl")).unwrap();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for pair in v["attributes"].as_array().unwrap() {
            let (k, val) = (pair[0].as_str().unwrap(), pair[1].as_str().unwrap());
            for w in k.split_whitespace().chain(val.split_whitespace()) {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
    }
    let mut expected: Vec<(String, usize)> = counts.into_iter().collect();
    expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    let lines: Vec<&str> = vocab.lines().collect();
    assert_eq!(lines[..4], ["[PAD]", "[CLS]", "[MASK]", "[UNK]"]);
    let got: Vec<&str> = lines[4..].to_vec();
    let want: Vec<&str> = expected.iter().map(|(t, _)| t.as_str()).collect();
    assert_eq!(got, want);
}

#[test]
fn config_errors_list_every_problem() {
    let dir = prepared();
    let bad = config(16).replace(r#""lr": 0.001"#, r#""lr": -1.0"#).replace(r#""n_layers": 1"#, r#""n_layers": 1, "depth": 3"#);
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = textrec(dir.path(), &["pretrain", "--config", "bad.json", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.depth"), "{err}");
    assert!(err.contains("lr"), "{err}");
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn finetune_rejects_mismatched_checkpoint() {
    let dir = prepared();
    let p = dir.path();
    std::fs::write(p.join("small.json"), config(16)).unwrap();
    std::fs::write(p.join("wide.json"), config(32)).unwrap();
    ok(p, &["pretrain", "--config", "small.json", "--out", "pre.ckpt"]);
    let out = textrec(p, &["finetune", "--config", "wide.json", "--init", "pre.ckpt", "--out", "ft.ckpt"]);
    assert_ne!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d_model: config 32, checkpoint 16"), "{err}");
}

#[test]
fn recommend_clamps_k_and_sorts() {
    let dir = prepared();
    let p = dir.path();
    std::fs::write(p.join("run.json"), config(16)).unwrap();
    ok(p, &["finetune", "--config", "run.json", "--out", "ft.ckpt"]);
    let args = ["recommend", "--ckpt", "ft.ckpt", "--items", "data/domain1/items.jsonl", "--history", "kitchen-0001"];
    let all: Vec<serde_json::Value> =
        serde_json::from_str(&ok(p, &[&args[..], &["--topk", "1000"]].concat())).unwrap();
    assert_eq!(all.len(), 50);
    let scores: Vec<f64> = all.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let top3: Vec<serde_json::Value> = serde_json::from_str(&ok(p, &[&args[..], &["--topk", "3"]].concat())).unwrap();
    assert_eq!(top3[..], all[..3]);

    let two: String = std::fs::read_to_string(p.join("data/domain1/items.jsonl")).unwrap().lines().take(2).map(|l| format!("{l}\n")).collect();
    std::fs::write(p.join("two.jsonl"), two).unwrap();
    let args = ["recommend", "--ckpt", "ft.ckpt", "--items", "two.jsonl", "--history", "kitchen-0001", "--topk", "3"];
    let recs: Vec<serde_json::Value> = serde_json::from_str(&ok(p, &args)).unwrap();
    assert_eq!(recs.len(), 2);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = prepared();
    let out = textrec(dir.path(), &["evaluate", "--ckpt", "nope.ckpt", "--data", "data/domain1"]);
    assert_eq!(out.status.code(), Some(4));
    let out = textrec(dir.path(), &["build-vocab", "--items", "missing.jsonl", "--out", "v.txt"]);
    assert_eq!(out.status.code(), Some(3));
    let out = textrec(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
