//! Joint goal accuracy, per-domain accuracy and error taxonomy.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueState, Ontology, NONE};
use crate::error::{write_file, write_json, Error, Result};

/// State of one turn; turns are numbered from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnState {
    pub dialogue_id: String,
    pub turn: usize,
    pub state: DialogueState,
}

/// Gold states of every labeled turn.
pub fn gold_turn_states(dialogues: &[Dialogue]) -> Vec<TurnState> {
    dialogues
        .iter()
        .flat_map(|d| {
            d.turns.iter().enumerate().filter_map(move |(t, turn)| {
                turn.gold_state.as_ref().map(|s| TurnState {
                    dialogue_id: d.id.clone(),
                    turn: t,
                    state: s.clone(),
                })
            })
        })
        .collect()
}

pub fn turn_states(states: &BTreeMap<String, Vec<DialogueState>>) -> Vec<TurnState> {
    states
        .iter()
        .flat_map(|(id, turns)| {
            turns.iter().enumerate().map(move |(t, s)| TurnState {
                dialogue_id: id.clone(),
                turn: t,
                state: s.clone(),
            })
        })
        .collect()
}

/// Pairs each gold turn with its prediction, ordered by (dialogue id, turn).
fn align<'a>(preds: &'a [TurnState], golds: &'a [TurnState]) -> Result<Vec<(&'a DialogueState, &'a DialogueState)>> {
    if golds.is_empty() {
        return Err(Error::NoTurns);
    }
    let mut by_key: HashMap<(&str, usize), &DialogueState> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_key.insert((p.dialogue_id.as_str(), p.turn), &p.state).is_some() {
            return Err(Error::Alignment(format!(
                "duplicate prediction for dialogue {:?} turn {}",
                p.dialogue_id, p.turn
            )));
        }
    }
    let mut sorted: Vec<&TurnState> = golds.iter().collect();
    sorted.sort_by(|a, b| (&a.dialogue_id, a.turn).cmp(&(&b.dialogue_id, b.turn)));
    let mut pairs = Vec::with_capacity(sorted.len());
    for g in sorted {
        let p = by_key.remove(&(g.dialogue_id.as_str(), g.turn)).ok_or_else(|| {
            Error::Alignment(format!("no prediction for dialogue {:?} turn {}", g.dialogue_id, g.turn))
        })?;
        if p.len() != g.state.len() {
            return Err(Error::Alignment(format!(
                "dialogue {:?} turn {}: prediction covers {} slots, gold {}",
                g.dialogue_id,
                g.turn,
                p.len(),
                g.state.len()
            )));
        }
        pairs.push((p, &g.state));
    }
    if let Some(((id, turn), _)) = by_key.into_iter().min_by(|a, b| a.0.cmp(&b.0)) {
        return Err(Error::Alignment(format!("prediction for dialogue {id:?} turn {turn} has no gold state")));
    }
    Ok(pairs)
}

/// Fraction of turns whose every slot matches gold.
pub fn joint_goal_accuracy(preds: &[TurnState], golds: &[TurnState]) -> Result<f64> {
    let pairs = align(preds, golds)?;
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Joint accuracy over one domain's slots, counting only turns where gold or
/// prediction assigns that domain a non-"none" value.
pub fn domain_joint_accuracy(preds: &[TurnState], golds: &[TurnState], ontology: &Ontology, domain: &str) -> Result<f64> {
    let slots = ontology.domain_slots(domain);
    if slots.is_empty() {
        return Err(Error::UnknownDomain(domain.to_string()));
    }
    let pairs = align(preds, golds)?;
    domain_accuracy_aligned(&pairs, &slots).ok_or_else(|| Error::NoActiveTurns(domain.to_string()))
}

fn domain_accuracy_aligned(pairs: &[(&DialogueState, &DialogueState)], slots: &[usize]) -> Option<f64> {
    let mut active = 0usize;
    let mut correct = 0usize;
    for (p, g) in pairs {
        let is_active = slots.iter().any(|&j| p.get(j) != NONE || g.get(j) != NONE);
        if is_active {
            active += 1;
            if slots.iter().all(|&j| p.get(j) == g.get(j)) {
                correct += 1;
            }
        }
    }
    (active > 0).then(|| correct as f64 / active as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    /// Gold active, predicted "none".
    TypeI,
    /// Gold "none", predicted active.
    TypeII,
    /// Both active, values differ.
    TypeIII,
}

impl ErrorType {
    pub const ALL: [ErrorType; 3] = [ErrorType::TypeI, ErrorType::TypeII, ErrorType::TypeIII];

    pub fn key(self) -> &'static str {
        match self {
            ErrorType::TypeI => "type1",
            ErrorType::TypeII => "type2",
            ErrorType::TypeIII => "type3",
        }
    }
}

pub fn classify_error(gold: &str, pred: &str) -> Option<ErrorType> {
    match (gold == pred, gold == NONE, pred == NONE) {
        (true, _, _) => None,
        (false, false, true) => Some(ErrorType::TypeI),
        (false, true, false) => Some(ErrorType::TypeII),
        (false, false, false) => Some(ErrorType::TypeIII),
        (false, true, true) => unreachable!("both none yet different"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub count: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jga: f64,
    pub per_domain: BTreeMap<String, f64>,
    /// Keyed `type1`, `type2`, `type3`.
    pub errors: BTreeMap<String, ErrorEntry>,
    pub n_turns: usize,
    pub n_sampled: usize,
}

impl MetricsReport {
    pub fn error_total(&self) -> usize {
        self.errors.values().map(|e| e.count).sum()
    }

    pub fn count(&self, t: ErrorType) -> usize {
        self.errors.get(t.key()).map_or(0, |e| e.count)
    }

    /// Ratio as a percentage rounded to two decimals.
    pub fn percent(&self, t: ErrorType) -> String {
        format!("{:.2}", self.errors.get(t.key()).map_or(0.0, |e| e.ratio) * 100.0)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "jga {:.4}", self.jga);
        for (d, acc) in &self.per_domain {
            let _ = writeln!(s, "domain {d} {acc:.4}");
        }
        for t in ErrorType::ALL {
            let _ = writeln!(s, "{} {} {}%", t.key(), self.count(t), self.percent(t));
        }
        let _ = writeln!(s, "errors {} over {} sampled turns", self.error_total(), self.n_sampled);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "jga,{:.4}", self.jga);
        for (d, acc) in &self.per_domain {
            let _ = writeln!(s, "{d},{acc:.4}");
        }
        for t in ErrorType::ALL {
            let _ = writeln!(s, "{}_count,{}", t.key(), self.count(t));
            let _ = writeln!(s, "{}_percent,{}", t.key(), self.percent(t));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// Tallies wrong pairs by type; ratios are zero when nothing is wrong.
pub fn error_breakdown<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> BTreeMap<String, ErrorEntry> {
    let mut counts: BTreeMap<ErrorType, usize> = ErrorType::ALL.iter().map(|&t| (t, 0)).collect();
    for (gold, pred) in pairs {
        if let Some(t) = classify_error(gold, pred) {
            *counts.get_mut(&t).expect("all types present") += 1;
        }
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(t, count)| {
            let ratio = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (t.key().to_string(), ErrorEntry { count, ratio })
        })
        .collect()
}

/// Full metrics, with the error taxonomy over a seeded sample of `sample_n`
/// wrong turns (all wrong turns when `None` or when fewer exist).
pub fn error_report(
    preds: &[TurnState],
    golds: &[TurnState],
    ontology: &Ontology,
    sample_n: Option<usize>,
    seed: u64,
) -> Result<MetricsReport> {
    let pairs = align(preds, golds)?;
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    let jga = correct as f64 / pairs.len() as f64;
    let mut per_domain = BTreeMap::new();
    for domain in ontology.domains() {
        if let Some(acc) = domain_accuracy_aligned(&pairs, &ontology.domain_slots(&domain)) {
            per_domain.insert(domain, acc);
        }
    }

    let wrong: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].0 != pairs[i].1).collect();
    let take = sample_n.map_or(wrong.len(), |n| n.min(wrong.len()));
    let mut chosen: Vec<usize> = if take == wrong.len() {
        wrong.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, wrong.len(), take)
            .into_iter()
            .map(|k| wrong[k])
            .collect()
    };
    chosen.sort_unstable();
    let errors = error_breakdown(chosen.iter().flat_map(|&i| {
        let (p, g) = pairs[i];
        g.values().iter().zip(p.values()).map(|(g, p)| (g.as_str(), p.as_str()))
    }));
    Ok(MetricsReport {
        jga,
        per_domain,
        errors,
        n_turns: pairs.len(),
        n_sampled: take,
    })
}
