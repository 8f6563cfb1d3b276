//! Teacher training, pseudo-labeling and student iterations.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{contrastive_loss_and_grad, ContrastiveBatch, Reduction};
use crate::corpus::{serialize_context, Dialogue, DialogueState, Ontology, TokenSequence, Vocabulary};
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams, SchemaEncoder};
use crate::error::{read_json, write_json, Error, Result};
use crate::eval::{error_report, gold_turn_states, joint_goal_accuracy, turn_states, MetricsReport};
use crate::head::{init_head, predict_corpus, PredictedStates, SchemaBank};
use crate::model::{dst_loss_and_grad, DstModel};
use crate::nn::DropoutPlan;
use crate::optim::{AdamW, AdamWConfig, ParamGroup, StepOutcome};
use crate::params::ParamSet;
use crate::seed::{derive_seed, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Base,
    Ssl,
    St,
    Css,
}

impl Objective {
    pub fn uses_contrastive(self) -> bool {
        matches!(self, Objective::Ssl | Objective::Css)
    }

    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Objective::St | Objective::Css)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Base => "base",
            Objective::Ssl => "ssl",
            Objective::St => "st",
            Objective::Css => "css",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Objective::Base),
            "ssl" => Ok(Objective::Ssl),
            "st" => Ok(Objective::St),
            "css" => Ok(Objective::Css),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherSelection {
    #[default]
    Best,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub dropout: f64,
    pub tau: f64,
    pub teacher_epochs: usize,
    pub student_loops: usize,
    pub student_epochs_per_loop: usize,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub teacher_selection: TeacherSelection,
    /// Whether pseudo-labeled instances also enter the contrastive term.
    pub contrastive_on_pseudo: bool,
    pub contrastive_reduction: Reduction,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Css,
            batch_size: 8,
            lr_encoder: 4e-5,
            lr_head: 1e-4,
            dropout: 0.1,
            tau: 0.1,
            teacher_epochs: 50,
            student_loops: 3,
            student_epochs_per_loop: 10,
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            seed: 0,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 512,
            teacher_selection: TeacherSelection::Best,
            contrastive_on_pseudo: true,
            contrastive_reduction: Reduction::Sum,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_encoder", self.lr_encoder)?;
        positive("lr_head", self.lr_head)?;
        positive("tau", self.tau)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.objective.uses_contrastive() && self.dropout == 0.0 {
            return Err(Error::Config(format!(
                "objective {} needs a positive dropout rate for its augmented views",
                self.objective
            )));
        }
        if self.grad_clip_norm < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("grad_clip_norm and weight_decay must be non-negative".into()));
        }
        self.encoder_config(4).validate()
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            dropout_rate: self.dropout,
            max_len: self.max_len,
            seed: derive_seed(self.seed, streams::INIT),
        }
    }

    pub fn adamw_config(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            grad_clip_norm: self.grad_clip_norm,
            ..AdamWConfig::default()
        }
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        vec![
            ParamGroup {
                prefix: "context.".into(),
                lr: self.lr_encoder,
            },
            ParamGroup {
                prefix: "head.".into(),
                lr: self.lr_head,
            },
        ]
    }

    /// Teacher-only objectives run no student loops.
    pub fn effective_student_loops(&self) -> usize {
        if self.objective.uses_unlabeled() {
            self.student_loops
        } else {
            0
        }
    }
}

/// Fresh model plus the frozen schema encoder copied from its initial context encoder.
pub fn init_model(config: &TrainConfig, vocab_size: usize) -> Result<(DstModel, SchemaEncoder)> {
    config.validate()?;
    let context = init_encoder(&config.encoder_config(vocab_size))?;
    let head = init_head(config.d_model, config.n_heads, derive_seed(config.seed, streams::HEAD))?;
    let schema = SchemaEncoder::new(Arc::new(context.clone()));
    Ok((DstModel::new(context, head)?, schema))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    Gold,
    Pseudo,
}

/// One turn context with its per-slot target value indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainInstance {
    pub dialogue_id: String,
    pub turn: usize,
    pub tokens: TokenSequence,
    pub target: Vec<usize>,
    pub source: TargetSource,
}

/// Instances conditioned on the gold previous state.
pub fn gold_instances(dialogues: &[Dialogue], ontology: &Ontology, vocab: &Vocabulary, max_len: usize) -> Result<Vec<TrainInstance>> {
    let mut out = Vec::new();
    for d in dialogues {
        let mut prev = DialogueState::empty(ontology);
        for (t, turn) in d.turns.iter().enumerate() {
            let gold = turn.gold_state.as_ref().ok_or_else(|| Error::InvalidTurn {
                dialogue: d.id.clone(),
                turn: t,
                message: "labeled pool turn has no gold state".into(),
            })?;
            let tokens = serialize_context(&d.turns[..t], &prev, turn, ontology, vocab, max_len)?;
            out.push(TrainInstance {
                dialogue_id: d.id.clone(),
                turn: t,
                tokens,
                target: gold.value_indices(ontology)?,
                source: TargetSource::Gold,
            });
            prev = gold.clone();
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabeledTurn {
    pub dialogue_id: String,
    pub turn: usize,
    pub pseudo_state: DialogueState,
    pub producer_loop: usize,
}

#[derive(Serialize, Deserialize)]
struct RawPseudo {
    dialogue_id: String,
    turn: usize,
    pseudo_state: BTreeMap<String, String>,
    producer_loop: usize,
}

pub fn save_pseudo_labels(path: impl AsRef<Path>, labels: &[PseudoLabeledTurn], ontology: &Ontology) -> Result<()> {
    let raw: Vec<RawPseudo> = labels
        .iter()
        .map(|p| RawPseudo {
            dialogue_id: p.dialogue_id.clone(),
            turn: p.turn,
            pseudo_state: p.pseudo_state.to_map(ontology),
            producer_loop: p.producer_loop,
        })
        .collect();
    write_json(path.as_ref(), &raw)
}

pub fn load_pseudo_labels(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Vec<PseudoLabeledTurn>> {
    let raw: Vec<RawPseudo> = read_json(path.as_ref())?;
    raw.into_iter()
        .map(|r| {
            Ok(PseudoLabeledTurn {
                pseudo_state: DialogueState::from_map(ontology, &r.pseudo_state, &r.dialogue_id, r.turn)?,
                dialogue_id: r.dialogue_id,
                turn: r.turn,
                producer_loop: r.producer_loop,
            })
        })
        .collect()
}

/// Instances for unlabeled dialogues, conditioned on the pseudo previous state.
pub fn pseudo_instances(
    unlabeled: &[Dialogue],
    labels: &[PseudoLabeledTurn],
    ontology: &Ontology,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TrainInstance>> {
    let by_key: HashMap<(&str, usize), &DialogueState> = labels
        .iter()
        .map(|p| ((p.dialogue_id.as_str(), p.turn), &p.pseudo_state))
        .collect();
    let mut out = Vec::new();
    for d in unlabeled {
        let mut prev = DialogueState::empty(ontology);
        for (t, turn) in d.turns.iter().enumerate() {
            let state = *by_key.get(&(d.id.as_str(), t)).ok_or_else(|| Error::MissingPseudoLabel {
                dialogue: d.id.clone(),
                turn: t,
            })?;
            let tokens = serialize_context(&d.turns[..t], &prev, turn, ontology, vocab, max_len)?;
            out.push(TrainInstance {
                dialogue_id: d.id.clone(),
                turn: t,
                tokens,
                target: state.value_indices(ontology)?,
                source: TargetSource::Pseudo,
            });
            prev = state.clone();
        }
    }
    Ok(out)
}

/// Hidden-label copy of a seeded half of `labeled`, standing in for the
/// unlabeled pool when every training dialogue is labeled.
pub fn full_data_unlabeled(labeled: &[Dialogue], seed: u64) -> Vec<Dialogue> {
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::SAMPLING)));
    order.truncate(crate::corpus::pool_size(0.5, labeled.len()));
    order.sort_unstable();
    order.into_iter().map(|i| labeled[i].without_labels()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveSettings {
    pub tau: f64,
    pub reduction: Reduction,
    pub include_pseudo: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    /// Summed slot losses over the batch.
    pub dst: f64,
    /// `None` when the contrastive term was not evaluated.
    pub contrastive: Option<f64>,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.dst + self.contrastive.unwrap_or(0.0)
    }
}

/// Losses of one batch; gradients of their sum are added into `grads`.
///
/// Instance `i` uses dropout seed `seeds[i]` for its main pass and
/// `seeds[i] ^ 1` for its augmented view.
pub fn batch_step(
    model: &DstModel,
    bank: &SchemaBank,
    batch: &[&TrainInstance],
    seeds: &[u64],
    contrastive: Option<ContrastiveSettings>,
    grads: &mut DstModel,
) -> Result<BatchLoss> {
    let mut passes = Vec::with_capacity(batch.len());
    let mut d_features = Vec::with_capacity(batch.len());
    let mut dst = 0.0;
    for (inst, &s) in batch.iter().zip(seeds) {
        let pass = model.forward(inst.tokens.ids(), DropoutPlan::sample(s), bank)?;
        let (loss, dw) = dst_loss_and_grad(&pass, bank, &inst.target);
        dst += loss;
        passes.push(pass);
        d_features.push(dw);
    }

    let mut d_cls = vec![None; batch.len()];
    let mut contrastive_loss = None;
    if let Some(settings) = contrastive {
        let eligible: Vec<usize> = (0..batch.len())
            .filter(|&i| settings.include_pseudo || batch[i].source == TargetSource::Gold)
            .collect();
        if !eligible.is_empty() {
            let mut views = Vec::with_capacity(eligible.len());
            for &i in &eligible {
                views.push(model.context.forward_ids(batch[i].tokens.ids(), DropoutPlan::sample(seeds[i] ^ 1))?);
            }
            let cb = ContrastiveBatch::new(
                eligible.iter().map(|&i| passes[i].cls()).collect(),
                views.iter().map(|(out, _)| out.cls().to_owned()).collect(),
                settings.tau,
            )?;
            let g = contrastive_loss_and_grad(&cb, settings.reduction);
            contrastive_loss = Some(g.loss);
            for (k, &i) in eligible.iter().enumerate() {
                d_cls[i] = Some(g.d_reps[k].clone());
            }
            for ((out, cache), d) in views.iter().zip(&g.d_aug_reps) {
                let mut d_hidden = ndarray::Array2::zeros(out.hidden.raw_dim());
                d_hidden.row_mut(0).assign(d);
                model.context.backward(cache, &d_hidden, &mut grads.context);
            }
        }
    }

    for ((pass, dw), dc) in passes.iter().zip(&d_features).zip(&d_cls) {
        model.backward(pass, Some(dw), dc.as_ref(), grads);
    }
    Ok(BatchLoss {
        dst,
        contrastive: contrastive_loss,
    })
}

/// One line of the iteration report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 for the teacher, `k` for the k-th student loop.
    #[serde(rename = "loop")]
    pub loop_idx: usize,
    /// 1-based within its stage.
    pub epoch: usize,
    pub split: String,
    /// Mean slot loss per training instance.
    pub loss_dst: f64,
    /// Mean contrastive loss per training instance.
    pub loss_contrastive: Option<f64>,
    pub jga: Option<f64>,
}

pub fn write_report(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    crate::error::write_file(path.as_ref(), text)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = crate::error::read_file(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, &e)))
        .collect()
}

/// Audit counters for objective isolation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub contrastive_evaluations: u64,
    /// Unlabeled dialogues read while pseudo-labeling.
    pub unlabeled_reads: u64,
    pub optimizer_steps: u64,
    pub skipped_steps: u64,
}

pub struct TeacherOutcome {
    pub best: DstModel,
    pub last: DstModel,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub best_jga: Option<f64>,
}

/// Shared state of one training run.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub ontology: &'a Ontology,
    pub vocab: &'a Vocabulary,
    pub bank: SchemaBank,
    pub validation: &'a [Dialogue],
    pub counters: Counters,
    pub records: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        ontology: &'a Ontology,
        vocab: &'a Vocabulary,
        bank: SchemaBank,
        validation: &'a [Dialogue],
    ) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            ontology,
            vocab,
            bank,
            validation,
            counters: Counters::default(),
            records: Vec::new(),
        })
    }

    /// Validation JGA with dropout off; `None` without a validation set.
    pub fn validation_jga(&self, model: &DstModel) -> Result<Option<f64>> {
        if self.validation.is_empty() {
            return Ok(None);
        }
        let preds = predict_corpus(model, &self.bank, self.validation, self.ontology, self.vocab)?;
        let golds = gold_turn_states(self.validation);
        Ok(Some(joint_goal_accuracy(&turn_states(&preds), &golds)?))
    }

    fn contrastive_settings(&self) -> Option<ContrastiveSettings> {
        self.config.objective.uses_contrastive().then_some(ContrastiveSettings {
            tau: self.config.tau,
            reduction: self.config.contrastive_reduction,
            include_pseudo: self.config.contrastive_on_pseudo,
        })
    }

    /// Runs `epochs` passes over `instances`, calling `after_epoch` with each
    /// epoch's validation JGA.
    fn train_epochs(
        &mut self,
        model: &mut DstModel,
        instances: &[TrainInstance],
        epochs: usize,
        loop_idx: usize,
        mut after_epoch: impl FnMut(&DstModel, usize, Option<f64>),
    ) -> Result<()> {
        if instances.is_empty() {
            return Err(Error::EmptyLabeledPool);
        }
        let mut opt = AdamW::new(model, self.config.adamw_config(), self.config.param_groups())?;
        let stage = format!("loop{loop_idx}");
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{}/{stage}", streams::SHUFFLE)));
        let dropout_base = derive_seed(self.config.seed, &format!("{}/{stage}", streams::DROPOUT));
        let contrastive = self.contrastive_settings();
        let mut grads = model.zeros_like();
        let mut order: Vec<usize> = (0..instances.len()).collect();
        for epoch in 1..=epochs {
            order.shuffle(&mut shuffle);
            let mut dst_total = 0.0;
            let mut contrastive_total = 0.0;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&TrainInstance> = chunk.iter().map(|&i| &instances[i]).collect();
                let seeds: Vec<u64> = (0..batch.len())
                    .map(|m| derive_seed(dropout_base, &format!("{epoch}/{b}/{m}")))
                    .collect();
                grads.zero();
                let loss = batch_step(model, &self.bank, &batch, &seeds, contrastive, &mut grads)?;
                dst_total += loss.dst;
                if let Some(c) = loss.contrastive {
                    contrastive_total += c;
                    self.counters.contrastive_evaluations += 1;
                }
                match opt.step(model, &grads)? {
                    StepOutcome::Applied { .. } => self.counters.optimizer_steps += 1,
                    StepOutcome::Skipped => self.counters.skipped_steps += 1,
                }
            }
            let n = instances.len() as f64;
            let jga = self.validation_jga(model)?;
            let record = EpochRecord {
                loop_idx,
                epoch,
                split: "validation".into(),
                loss_dst: dst_total / n,
                loss_contrastive: contrastive.map(|_| contrastive_total / n),
                jga,
            };
            log::info!(
                "loop {loop_idx} epoch {epoch}: loss_dst {:.4} loss_contrastive {} jga {}",
                record.loss_dst,
                record.loss_contrastive.map_or("-".to_string(), |c| format!("{c:.4}")),
                jga.map_or("-".to_string(), |j| format!("{j:.4}")),
            );
            self.records.push(record);
            after_epoch(model, epoch, jga);
        }
        Ok(())
    }

    /// Trains on the labeled pool only, keeping the best-validation and last models.
    pub fn train_teacher(&mut self, mut model: DstModel, labeled: &[Dialogue]) -> Result<TeacherOutcome> {
        if labeled.is_empty() {
            return Err(Error::EmptyLabeledPool);
        }
        let instances = gold_instances(labeled, self.ontology, self.vocab, self.config.max_len)?;
        let mut best: Option<(DstModel, usize, Option<f64>)> = None;
        let epochs = self.config.teacher_epochs;
        self.train_epochs(&mut model, &instances, epochs, 0, |m, epoch, jga| {
            let better = match (&best, jga) {
                (None, _) => true,
                (Some((_, _, Some(b))), Some(j)) => j > *b,
                _ => false,
            };
            if better {
                best = Some((m.clone(), epoch, jga));
            }
        })?;
        let (best_model, best_epoch, best_jga) = match best {
            Some(b) if b.2.is_some() => b,
            _ => (model.clone(), epochs, None),
        };
        Ok(TeacherOutcome {
            best: best_model,
            last: model,
            best_epoch,
            best_jga,
        })
    }

    /// Predicts every turn of every unlabeled dialogue, feeding each turn the
    /// model's own previous prediction.
    pub fn generate_pseudo_labels(&mut self, model: &DstModel, unlabeled: &[Dialogue], loop_idx: usize) -> Result<Vec<PseudoLabeledTurn>> {
        self.counters.unlabeled_reads += unlabeled.len() as u64;
        let preds = predict_corpus(model, &self.bank, unlabeled, self.ontology, self.vocab)?;
        let mut out = Vec::new();
        for d in unlabeled {
            for (t, state) in preds[&d.id].iter().enumerate() {
                out.push(PseudoLabeledTurn {
                    dialogue_id: d.id.clone(),
                    turn: t,
                    pseudo_state: state.clone(),
                    producer_loop: loop_idx,
                });
            }
        }
        Ok(out)
    }

    /// Warm-starts from `init_from` and trains on gold and pseudo instances mixed together.
    pub fn train_student(
        &mut self,
        init_from: &DstModel,
        labeled: &[TrainInstance],
        unlabeled: &[Dialogue],
        pseudo: &[PseudoLabeledTurn],
        loop_idx: usize,
    ) -> Result<DstModel> {
        let mut instances = labeled.to_vec();
        instances.extend(pseudo_instances(unlabeled, pseudo, self.ontology, self.vocab, self.config.max_len)?);
        let mut student = init_from.clone();
        let epochs = self.config.student_epochs_per_loop;
        self.train_epochs(&mut student, &instances, epochs, loop_idx, |_, _, _| {})?;
        Ok(student)
    }
}

/// Decodes `dialogues` and scores them against their gold states.
pub fn evaluate_dialogues(
    model: &DstModel,
    bank: &SchemaBank,
    dialogues: &[Dialogue],
    ontology: &Ontology,
    vocab: &Vocabulary,
    sample_n: Option<usize>,
    seed: u64,
) -> Result<(PredictedStates, MetricsReport)> {
    let preds = predict_corpus(model, bank, dialogues, ontology, vocab)?;
    let report = error_report(&turn_states(&preds), &gold_turn_states(dialogues), ontology, sample_n, seed)?;
    Ok((preds, report))
}

pub struct PipelineOutcome {
    pub model: DstModel,
    pub schema: Arc<EncoderParams>,
    pub teacher_best: DstModel,
    pub teacher_last: DstModel,
    pub teacher_best_epoch: usize,
    /// One model per student loop, in order.
    pub students: Vec<DstModel>,
    /// Pseudo labels consumed by each student loop, in order.
    pub pseudo_labels: Vec<Vec<PseudoLabeledTurn>>,
    /// Validation JGA of the teacher, then of each student.
    pub loop_jga: Vec<Option<f64>>,
    pub records: Vec<EpochRecord>,
    pub counters: Counters,
}

/// Teacher training followed by the configured number of student loops.
///
/// Objectives without self-training never read `unlabeled`.
pub fn run_pipeline(
    labeled: &[Dialogue],
    unlabeled: &[Dialogue],
    validation: &[Dialogue],
    ontology: &Ontology,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<PipelineOutcome> {
    let (model, schema) = init_model(config, vocab.len())?;
    let bank = SchemaBank::build(&schema, ontology, vocab);
    let mut trainer = Trainer::new(config.clone(), ontology, vocab, bank, validation)?;

    let teacher = trainer.train_teacher(model, labeled)?;
    let mut current = match config.teacher_selection {
        TeacherSelection::Best => teacher.best.clone(),
        TeacherSelection::Last => teacher.last.clone(),
    };
    let mut loop_jga = vec![trainer.validation_jga(&current)?];
    let mut students = Vec::new();
    let mut pseudo_labels = Vec::new();
    let loops = config.effective_student_loops();
    if loops > 0 {
        let gold = gold_instances(labeled, ontology, vocab, config.max_len)?;
        for k in 1..=loops {
            let pseudo = trainer.generate_pseudo_labels(&current, unlabeled, k - 1)?;
            current = trainer.train_student(&current, &gold, unlabeled, &pseudo, k)?;
            loop_jga.push(trainer.validation_jga(&current)?);
            students.push(current.clone());
            pseudo_labels.push(pseudo);
        }
    }
    Ok(PipelineOutcome {
        model: current,
        schema: Arc::new(schema.params().clone()),
        teacher_best: teacher.best,
        teacher_last: teacher.last,
        teacher_best_epoch: teacher.best_epoch,
        students,
        pseudo_labels,
        loop_jga,
        records: trainer.records,
        counters: trainer.counters,
    })
}
