use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_css-dst");

fn css_dst(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("CSS_DST_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = css_dst(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = css_dst(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, dialogues: usize, turns: usize, seed: u64) -> PathBuf {
    let out = dir.join("corpus");
    ok(&[
        "synth",
        "--domains",
        "2",
        "--slots-per-domain",
        "2",
        "--values-per-slot",
        "3",
        "--dialogues",
        &dialogues.to_string(),
        "--turns",
        &turns.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    write_json(
        &path,
        &json!({
            "d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 96,
            "teacher_epochs": 2, "student_loops": 3, "student_epochs_per_loop": 1,
            "lr_encoder": 1e-3, "lr_head": 1e-3
        }),
    );
    path
}

#[test]
fn synth_files_load_and_repeat() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = synth(a.path(), 60, 2, 5);
    let cb = synth(b.path(), 60, 2, 5);
    for f in ["train.json", "valid.json", "test.json", "ontology.json"] {
        assert_eq!(std::fs::read(ca.join(f)).unwrap(), std::fs::read(cb.join(f)).unwrap(), "{f}");
    }
    let train = read_json(&ca.join("train.json"));
    assert_eq!(train["dialogues"].as_array().unwrap().len(), 48);
    assert!(ca.join("manifest.json").exists());
}

#[test]
fn single_turn_corpus_has_no_history() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 20, 1, 2);
    let train = read_json(&corpus.join("train.json"));
    for d in train["dialogues"].as_array().unwrap() {
        let turns = d["turns"].as_array().unwrap();
        assert_eq!(turns.len(), 1);
        assert_eq!(turns[0]["system"], "");
    }
}

#[test]
fn split_is_reproducible_and_counts_ids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 124, 1, 1);
    let data = corpus.join("train.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["split", "--data", s(&data), "--ratio", "0.25", "--seed", "1", "--out", s(&a)]);
    ok(&["split", "--data", s(&data), "--ratio", "0.25", "--seed", "1", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.json");
    ok(&["split", "--data", s(&data), "--ratio", "0.1", "--seed", "3", "--out", s(&c)]);
    let split = read_json(&c);
    assert_eq!(split["labeled"].as_array().unwrap().len(), 10);
    assert_eq!(split["unlabeled"].as_array().unwrap().len(), 50);
}

#[test]
fn zero_ratio_split_fails() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 20, 1, 1);
    let out = dir.path().join("split.json");
    let err = fails(&["split", "--data", s(&corpus.join("train.json")), "--ratio", "0.0", "--out", s(&out)]);
    assert!(err.contains("empty labeled pool"), "{err}");
    assert!(!out.exists());
}

fn run(dir: &Path, corpus: &Path, split: &Path, objective: &str, out: &Path) -> String {
    let config = tiny_config(dir);
    ok(&[
        "--threads",
        "1",
        "run",
        "--data",
        s(&corpus.join("train.json")),
        "--ontology",
        s(&corpus.join("ontology.json")),
        "--split",
        s(split),
        "--objective",
        objective,
        "--config",
        s(&config),
        "--seed",
        "2",
        "--out-dir",
        s(out),
        "--valid",
        s(&corpus.join("valid.json")),
        "--test",
        s(&corpus.join("test.json")),
    ])
}

fn split_file(dir: &Path, corpus: &Path) -> PathBuf {
    let split = dir.join("split.json");
    ok(&["split", "--data", s(&corpus.join("train.json")), "--ratio", "0.25", "--seed", "1", "--out", s(&split)]);
    split
}

#[test]
fn base_run_writes_no_pseudo_labels() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 40, 2, 3);
    let split = split_file(dir.path(), &corpus);
    let out = dir.path().join("base");
    let stdout = run(dir.path(), &corpus, &split, "base", &out);
    assert!(stdout.contains("jga "));
    assert!(!out.join("pseudo_labels").exists());
    assert!(out.join("teacher_best.ckpt").exists());
    assert!(out.join("report.json").exists());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["counters"]["unlabeled_reads"], 0);
    assert_eq!(summary["counters"]["contrastive_evaluations"], 0);
}

#[test]
fn css_run_writes_one_pseudo_label_file_per_loop() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 40, 2, 3);
    let split = split_file(dir.path(), &corpus);
    let out = dir.path().join("css");
    run(dir.path(), &corpus, &split, "css", &out);
    let mut files: Vec<String> = std::fs::read_dir(out.join("pseudo_labels"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["loop1.json", "loop2.json", "loop3.json"]);
    for k in 1..=3 {
        assert!(out.join(format!("student_loop{k}.ckpt")).exists());
    }
    let lines = std::fs::read_to_string(out.join("iterations.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2 + 3);
}

#[test]
fn rerun_with_one_thread_reproduces_reports_and_manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 40, 2, 4);
    let split = split_file(dir.path(), &corpus);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(dir.path(), &corpus, &split, "css", &a);
    run(dir.path(), &corpus, &split, "css", &b);
    for f in ["iterations.jsonl", "report.json", "test_predictions.json", "final.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let manifest = a.join("manifest.json");
    let verified = ok(&["manifest", "verify", s(&manifest)]);
    assert!(verified.starts_with("ok "));
    let replayed = ok(&["manifest", "replay", s(&manifest), "--out", s(&dir.path().join("replay"))]);
    assert!(replayed.contains("replay reproduced"), "{replayed}");

    std::fs::write(a.join("report.json"), "{}").unwrap();
    let err = fails(&["manifest", "verify", s(&manifest)]);
    assert!(err.contains("report.json"), "{err}");
}

fn eval_ontology(dir: &Path) -> PathBuf {
    let path = dir.join("ontology.json");
    write_json(
        &path,
        &json!({ "hotel-area": ["none", "dontcare", "north", "south"], "hotel-stars": ["none", "3", "4"] }),
    );
    path
}

/// One single-turn dialogue per (gold area, predicted area) pair.
fn eval_files(dir: &Path, pairs: &[(&str, &str)]) -> (PathBuf, PathBuf) {
    let mut dialogues = Vec::new();
    let mut preds = serde_json::Map::new();
    for (i, (gold, pred)) in pairs.iter().enumerate() {
        let id = format!("d{i:04}");
        dialogues.push(json!({
            "id": id,
            "turns": [{ "system": "", "user": "book a hotel", "state": { "hotel-area": gold, "hotel-stars": "3" } }]
        }));
        preds.insert(id, json!([{ "turn": 0, "state": { "hotel-area": pred, "hotel-stars": "3" } }]));
    }
    let golds = dir.join("golds.json");
    let predictions = dir.join("preds.json");
    write_json(&golds, &json!({ "dialogues": dialogues }));
    write_json(&predictions, &Value::Object(preds));
    (predictions, golds)
}

#[test]
fn perfect_predictions_print_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let ontology = eval_ontology(dir.path());
    let (preds, golds) = eval_files(dir.path(), &[("north", "north"), ("none", "none")]);
    let report = dir.path().join("report.json");
    let stdout = ok(&[
        "evaluate", "--preds", s(&preds), "--golds", s(&golds), "--ontology", s(&ontology), "--report", s(&report),
    ]);
    assert_eq!(stdout.lines().next(), Some("jga 1.0000"));
    assert_eq!(read_json(&report)["jga"], 1.0);
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn error_table_of_203_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ontology = eval_ontology(dir.path());
    let mut pairs = vec![("north", "none"); 88];
    pairs.extend(vec![("none", "south"); 68]);
    pairs.extend(vec![("north", "south"); 47]);
    let (preds, golds) = eval_files(dir.path(), &pairs);
    let report = dir.path().join("report.json");
    let stdout = ok(&[
        "evaluate", "--preds", s(&preds), "--golds", s(&golds), "--ontology", s(&ontology), "--report", s(&report),
    ]);
    assert!(stdout.contains("type1 88 43.35%"), "{stdout}");
    assert!(stdout.contains("type2 68 33.50%"), "{stdout}");
    assert!(stdout.contains("type3 47 23.15%"), "{stdout}");
    let errors = &read_json(&report)["errors"];
    let total: u64 = ["type1", "type2", "type3"].iter().map(|k| errors[k]["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 203);
}

#[test]
fn missing_prediction_names_the_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    let ontology = eval_ontology(dir.path());
    let (preds, golds) = eval_files(dir.path(), &[("north", "north"), ("south", "south")]);
    let mut p = read_json(&preds);
    p.as_object_mut().unwrap().remove("d0001");
    write_json(&preds, &p);
    let err = fails(&[
        "evaluate",
        "--preds",
        s(&preds),
        "--golds",
        s(&golds),
        "--ontology",
        s(&ontology),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    assert!(err.contains("d0001"), "{err}");
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 20, 1, 1);
    let config = dir.path().join("bad.json");
    write_json(&config, &json!({ "learning_rate": 0.1 }));
    let err = fails(&[
        "run",
        "--data",
        s(&corpus.join("train.json")),
        "--ontology",
        s(&corpus.join("ontology.json")),
        "--config",
        s(&config),
        "--out-dir",
        s(&dir.path().join("out")),
    ]);
    assert!(err.contains("learning_rate"), "{err}");
}
