use std::sync::Arc;

use css_dst::checkpoint::{load_encoder, load_model, save_encoder, save_model};
use css_dst::corpus::{build_vocabulary, load_corpus, load_ontology, split_few_shot};
use css_dst::encoder::SchemaEncoder;
use css_dst::eval::{gold_turn_states, joint_goal_accuracy, turn_states};
use css_dst::head::{load_predictions, predict_corpus, save_predictions, SchemaBank};
use css_dst::selftrain::{
    evaluate_dialogues, load_pseudo_labels, read_report, run_pipeline, save_pseudo_labels, write_report, Objective,
    TrainConfig,
};
use css_dst::synth::{generate, write_corpus, SynthConfig};

fn config(objective: Objective) -> TrainConfig {
    TrainConfig {
        objective,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_len: 96,
        lr_encoder: 2e-3,
        lr_head: 2e-3,
        teacher_epochs: 3,
        student_loops: 2,
        student_epochs_per_loop: 2,
        seed: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn trained_model_survives_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&SynthConfig {
        domains: 2,
        slots_per_domain: 2,
        values_per_slot: 3,
        dialogues: 40,
        turns: 2,
        seed: 2,
    })
    .unwrap();
    let paths = write_corpus(&corpus, dir.path()).unwrap();
    let ontology = load_ontology(&paths["ontology"]).unwrap();
    let train = load_corpus(&paths["train"], &ontology).unwrap();
    let valid = load_corpus(&paths["valid"], &ontology).unwrap();
    let test = load_corpus(&paths["test"], &ontology).unwrap();

    let split = split_few_shot(&train, 0.25, 0.5, 1).unwrap();
    let (labeled, unlabeled) = split.apply(&train).unwrap();
    assert_eq!((labeled.len(), unlabeled.len()), (8, 16));
    let vocab = build_vocabulary(&train, &ontology, 1);
    let out = run_pipeline(&labeled, &unlabeled, &valid, &ontology, &vocab, &config(Objective::St)).unwrap();
    assert_eq!(out.students.len(), 2);
    assert_eq!(out.records.len(), 3 + 2 * 2);

    save_model(dir.path().join("final.ckpt"), &out.model).unwrap();
    save_encoder(dir.path().join("schema.ckpt"), &out.schema).unwrap();
    let model = load_model(dir.path().join("final.ckpt")).unwrap();
    let schema = SchemaEncoder::new(Arc::new(load_encoder(dir.path().join("schema.ckpt")).unwrap()));
    let bank = SchemaBank::build(&schema, &ontology, &vocab);
    let original_bank = SchemaBank::build(&SchemaEncoder::new(out.schema.clone()), &ontology, &vocab);

    let before = predict_corpus(&out.model, &original_bank, &test, &ontology, &vocab).unwrap();
    let after = predict_corpus(&model, &bank, &test, &ontology, &vocab).unwrap();
    assert_eq!(before, after);

    let preds_path = dir.path().join("preds.json");
    save_predictions(&preds_path, &after, &ontology).unwrap();
    let reloaded = load_predictions(&preds_path, &ontology).unwrap();
    assert_eq!(reloaded, after);

    let (_, report) = evaluate_dialogues(&model, &bank, &test, &ontology, &vocab, None, 0).unwrap();
    let jga = joint_goal_accuracy(&turn_states(&reloaded), &gold_turn_states(&test)).unwrap();
    assert_eq!(report.jga, jga);
    assert_eq!(report.n_turns, test.iter().map(|d| d.turns.len()).sum::<usize>());

    let labels_path = dir.path().join("loop1.json");
    save_pseudo_labels(&labels_path, &out.pseudo_labels[0], &ontology).unwrap();
    assert_eq!(load_pseudo_labels(&labels_path, &ontology).unwrap(), out.pseudo_labels[0]);

    let report_path = dir.path().join("iterations.jsonl");
    write_report(&report_path, &out.records).unwrap();
    assert_eq!(read_report(&report_path).unwrap(), out.records);
}

#[test]
fn teacher_only_objectives_ignore_the_unlabeled_pool() {
    let corpus = generate(&SynthConfig {
        domains: 1,
        slots_per_domain: 2,
        values_per_slot: 3,
        dialogues: 30,
        turns: 2,
        seed: 4,
    })
    .unwrap();
    let vocab = build_vocabulary(&corpus.train, &corpus.ontology, 1);
    let labeled = &corpus.train[..6];
    let unlabeled: Vec<_> = corpus.train[6..].iter().map(|d| d.without_labels()).collect();
    for objective in [Objective::Base, Objective::Ssl] {
        let cfg = config(objective);
        let with_pool = run_pipeline(labeled, &unlabeled, &corpus.valid, &corpus.ontology, &vocab, &cfg).unwrap();
        let without = run_pipeline(labeled, &[], &corpus.valid, &corpus.ontology, &vocab, &cfg).unwrap();
        assert_eq!(with_pool.model, without.model, "{objective}");
        assert_eq!(with_pool.counters.unlabeled_reads, 0);
        assert!(with_pool.pseudo_labels.is_empty());
    }
}
