use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use css_dst::checkpoint::{save_encoder, save_model};
use css_dst::corpus::{build_vocabulary, load_corpus, load_dialogue_ids, load_ontology, split_ids, Dialogue, FewShotSplit};
use css_dst::encoder::SchemaEncoder;
use css_dst::eval::{error_report, gold_turn_states, turn_states};
use css_dst::head::{load_predictions, save_predictions, SchemaBank};
use css_dst::manifest::{ManifestBuilder, MANIFEST_FILE};
use css_dst::seed::{derive_seed, streams};
use css_dst::selftrain::{
    evaluate_dialogues, full_data_unlabeled, run_pipeline, save_pseudo_labels, write_report, Objective, TrainConfig,
};
use css_dst::synth::{generate, write_corpus, SynthConfig};

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Job {
    /// Partition a training set into labeled, unlabeled and unused pools.
    Split(SplitArgs),
    /// Train a teacher and, for st/css, the student loops.
    Run(RunArgs),
    /// Score predictions against gold states.
    Evaluate(EvaluateArgs),
    /// Generate a templated synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled fraction of the dialogues.
    #[arg(long)]
    pub ratio: f64,
    /// Unlabeled fraction of the dialogues.
    #[arg(long, default_value_t = 0.5)]
    pub unlabeled: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Split file; without it every dialogue is labeled.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Overrides the objective of the config file.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// JSON training config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Validation dialogues for teacher selection and per-loop JGA.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test dialogues for the final report.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Classify errors on this many sampled wrong turns instead of all of them.
    #[arg(long)]
    pub sample_errors: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub golds: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Report JSON path; a CSV table is written next to it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub domains: usize,
    #[arg(long, default_value_t = 4)]
    pub slots_per_domain: usize,
    #[arg(long, default_value_t = 5)]
    pub values_per_slot: usize,
    #[arg(long, default_value_t = 200)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 3)]
    pub turns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub struct Outputs {
    pub root: PathBuf,
    /// Relative to `root`.
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn absolute(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
    Ok(())
}

fn absolute_opt(p: &mut Option<PathBuf>) -> Result<()> {
    p.as_mut().map_or(Ok(()), absolute)
}

fn file_name(p: &Path) -> PathBuf {
    PathBuf::from(p.file_name().expect("output paths name a file"))
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn sidecar(p: &Path) -> PathBuf {
    p.with_extension("manifest.json")
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Split(_) => "split",
            Job::Run(_) => "run",
            Job::Evaluate(_) => "evaluate",
            Job::Synth(_) => "synth",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Job::Split(a) => a.seed,
            Job::Run(a) => a.seed.unwrap_or_default(),
            Job::Evaluate(a) => a.seed,
            Job::Synth(a) => a.seed,
        }
    }

    pub fn absolutize(&mut self) -> Result<()> {
        match self {
            Job::Split(a) => {
                absolute(&mut a.data)?;
                absolute(&mut a.out)
            }
            Job::Run(a) => {
                absolute(&mut a.data)?;
                absolute(&mut a.ontology)?;
                absolute(&mut a.out_dir)?;
                absolute_opt(&mut a.split)?;
                absolute_opt(&mut a.config)?;
                absolute_opt(&mut a.valid)?;
                absolute_opt(&mut a.test)
            }
            Job::Evaluate(a) => {
                absolute(&mut a.preds)?;
                absolute(&mut a.golds)?;
                absolute(&mut a.ontology)?;
                absolute(&mut a.report)
            }
            Job::Synth(a) => absolute(&mut a.out),
        }
    }

    /// Points every output of the job into `root`.
    pub fn relocate(&mut self, root: &Path) {
        match self {
            Job::Split(a) => a.out = root.join(file_name(&a.out)),
            Job::Run(a) => a.out_dir = root.to_path_buf(),
            Job::Evaluate(a) => a.report = root.join(file_name(&a.report)),
            Job::Synth(a) => a.out = root.to_path_buf(),
        }
    }

    pub fn run(&self, manifest: &mut ManifestBuilder) -> Result<Outputs> {
        match self {
            Job::Split(a) => split(a, manifest),
            Job::Run(a) => train(a, manifest),
            Job::Evaluate(a) => evaluate(a, manifest),
            Job::Synth(a) => synth(a, manifest),
        }
    }
}

fn split(args: &SplitArgs, manifest: &mut ManifestBuilder) -> Result<Outputs> {
    manifest.input(&args.data)?;
    manifest.config(serde_json::json!({ "ratio": args.ratio, "unlabeled": args.unlabeled }));
    let ids = load_dialogue_ids(&args.data)?;
    let split = split_ids(&ids, args.ratio, args.unlabeled, args.seed)?;
    split.save(&args.out)?;
    println!(
        "labeled {} unlabeled {} unused {}",
        split.labeled_ids.len(),
        split.unlabeled_ids.len(),
        split.rest_ids.len()
    );
    Ok(Outputs {
        root: parent(&args.out),
        files: vec![file_name(&args.out)],
        manifest: sidecar(&args.out),
    })
}

fn load_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(objective) = args.objective {
        config.objective = objective;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn optional_corpus(path: &Option<PathBuf>, ontology: &css_dst::corpus::Ontology) -> Result<Vec<Dialogue>> {
    Ok(match path {
        Some(p) => load_corpus(p, ontology)?,
        None => Vec::new(),
    })
}

fn train(args: &RunArgs, manifest: &mut ManifestBuilder) -> Result<Outputs> {
    let config = load_config(args)?;
    for path in [Some(&args.data), Some(&args.ontology), args.split.as_ref(), args.config.as_ref(), args.valid.as_ref(), args.test.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.input(path)?;
    }
    manifest.config(serde_json::to_value(&config)?);

    let ontology = load_ontology(&args.ontology)?;
    let data = load_corpus(&args.data, &ontology)?;
    let (labeled, mut unlabeled) = match &args.split {
        Some(path) => FewShotSplit::load(path)?.apply(&data)?,
        None => (data.clone(), Vec::new()),
    };
    if unlabeled.is_empty() && config.objective.uses_unlabeled() {
        log::warn!("no unlabeled pool; drawing half of the labeled dialogues without their labels");
        unlabeled = full_data_unlabeled(&labeled, config.seed);
    }
    let valid = optional_corpus(&args.valid, &ontology)?;
    let test = optional_corpus(&args.test, &ontology)?;
    let vocab = build_vocabulary(&data, &ontology, config.min_count);
    log::info!(
        "{} objective: {} labeled, {} unlabeled, {} validation dialogues, vocabulary {}",
        config.objective,
        labeled.len(),
        unlabeled.len(),
        valid.len(),
        vocab.len()
    );

    let outcome = run_pipeline(&labeled, &unlabeled, &valid, &ontology, &vocab, &config)?;

    let dir = &args.out_dir;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut written = |rel: String| {
        let rel = PathBuf::from(rel);
        let path = dir.join(&rel);
        files.push(rel);
        path
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(written("config.json".into()), serde_json::to_string_pretty(&config)? + "\n")?;
    vocab.save(written("vocab.json".into()))?;
    save_encoder(written("schema_encoder.ckpt".into()), &outcome.schema)?;
    save_model(written("teacher_best.ckpt".into()), &outcome.teacher_best)?;
    save_model(written("teacher_last.ckpt".into()), &outcome.teacher_last)?;
    for (k, student) in outcome.students.iter().enumerate() {
        save_model(written(format!("student_loop{}.ckpt", k + 1)), student)?;
    }
    save_model(written("final.ckpt".into()), &outcome.model)?;
    for (k, labels) in outcome.pseudo_labels.iter().enumerate() {
        save_pseudo_labels(written(format!("pseudo_labels/loop{}.json", k + 1)), labels, &ontology)?;
    }
    write_report(written("iterations.jsonl".into()), &outcome.records)?;
    let summary = serde_json::json!({
        "objective": config.objective,
        "teacher_best_epoch": outcome.teacher_best_epoch,
        "loop_jga": outcome.loop_jga,
        "counters": outcome.counters,
        "labeled": labeled.len(),
        "unlabeled": unlabeled.len(),
    });
    std::fs::write(written("summary.json".into()), serde_json::to_string_pretty(&summary)? + "\n")?;

    println!("teacher best epoch {}", outcome.teacher_best_epoch);
    if !test.is_empty() {
        let schema = SchemaEncoder::new(outcome.schema.clone());
        let bank = SchemaBank::build(&schema, &ontology, &vocab);
        let sampling = derive_seed(config.seed, streams::SAMPLING);
        let (preds, report) = evaluate_dialogues(&outcome.model, &bank, &test, &ontology, &vocab, args.sample_errors, sampling)?;
        save_predictions(written("test_predictions.json".into()), &preds, &ontology)?;
        report.save(written("report.json".into()))?;
        report.save_csv(written("report.csv".into()))?;
        print!("{}", report.render());
    }

    Ok(Outputs {
        root: dir.clone(),
        files,
        manifest: dir.join(MANIFEST_FILE),
    })
}

fn evaluate(args: &EvaluateArgs, manifest: &mut ManifestBuilder) -> Result<Outputs> {
    for path in [&args.preds, &args.golds, &args.ontology] {
        manifest.input(path)?;
    }
    manifest.config(serde_json::json!({ "sample": args.sample }));
    let ontology = load_ontology(&args.ontology)?;
    let golds = load_corpus(&args.golds, &ontology)?;
    let preds = load_predictions(&args.preds, &ontology)?;
    let report = error_report(&turn_states(&preds), &gold_turn_states(&golds), &ontology, args.sample, args.seed)?;
    let csv = args.report.with_extension("csv");
    report.save(&args.report)?;
    report.save_csv(&csv)?;
    print!("{}", report.render());
    Ok(Outputs {
        root: parent(&args.report),
        files: vec![file_name(&args.report), file_name(&csv)],
        manifest: sidecar(&args.report),
    })
}

fn synth(args: &SynthArgs, manifest: &mut ManifestBuilder) -> Result<Outputs> {
    let cfg = SynthConfig {
        domains: args.domains,
        slots_per_domain: args.slots_per_domain,
        values_per_slot: args.values_per_slot,
        dialogues: args.dialogues,
        turns: args.turns,
        seed: args.seed,
    };
    manifest.config(serde_json::to_value(&cfg)?);
    let corpus = generate(&cfg)?;
    let paths = write_corpus(&corpus, &args.out)?;
    println!(
        "{} slots; {} train, {} valid, {} test dialogues in {}",
        corpus.ontology.len(),
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        args.out.display()
    );
    let mut files: Vec<PathBuf> = paths.values().map(|p| file_name(p)).collect();
    files.sort();
    Ok(Outputs {
        root: args.out.clone(),
        files,
        manifest: args.out.join(MANIFEST_FILE),
    })
}
