//! Slot-value matching head.
//!
//! Each slot's frozen schema vector queries the context representation
//! through multi-head attention; the result goes through a linear layer and a
//! layer norm, and candidate values are scored by negative Euclidean distance.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{serialize_context, Dialogue, DialogueState, Ontology, TokenSequence, Vocabulary};
use crate::encoder::{EncoderOutput, SchemaEncoder};
use crate::error::{read_file, write_json, Error, Result};
use crate::model::DstModel;
use crate::nn::{layer_norm, layer_norm_backward, linear, linear_backward, AttentionCache, AttentionParams, DropoutPlan, LayerNormCache};
use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub n_heads: usize,
    pub attention: AttentionParams,
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
    pub ln_gamma: Array1<f64>,
    pub ln_beta: Array1<f64>,
}

impl ParamSet for HeadParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, f64>)) {
        self.attention.visit("attention", f);
        f("w_proj", self.w_proj.view().into_dyn());
        f("b_proj", self.b_proj.view().into_dyn());
        f("ln_gamma", self.ln_gamma.view().into_dyn());
        f("ln_beta", self.ln_beta.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        self.attention.visit_mut("attention", f);
        f("w_proj", self.w_proj.view_mut().into_dyn());
        f("b_proj", self.b_proj.view_mut().into_dyn());
        f("ln_gamma", self.ln_gamma.view_mut().into_dyn());
        f("ln_beta", self.ln_beta.view_mut().into_dyn());
    }
}

impl HeadParams {
    pub fn zeros(d_model: usize, n_heads: usize) -> Self {
        HeadParams {
            n_heads,
            attention: AttentionParams::zeros(d_model),
            w_proj: Array2::zeros((d_model, d_model)),
            b_proj: Array1::zeros(d_model),
            ln_gamma: Array1::zeros(d_model),
            ln_beta: Array1::zeros(d_model),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams::zeros(self.w_proj.nrows(), self.n_heads)
    }

    pub fn d_model(&self) -> usize {
        self.w_proj.nrows()
    }
}

pub fn init_head(d_model: usize, n_heads: usize, seed: u64) -> Result<HeadParams> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "d_model {d_model} is not divisible by n_heads {n_heads}"
        )));
    }
    let mut head = HeadParams::zeros(d_model, n_heads);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (d_model as f64).sqrt()).expect("valid std");
    head.visit_mut(&mut |name, mut t| {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        if leaf == "ln_gamma" {
            t.fill(1.0);
        } else if leaf.starts_with("w_") {
            t.mapv_inplace(|_| normal.sample(&mut rng));
        }
    });
    Ok(head)
}

/// Frozen schema vectors for every slot and candidate value.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaBank {
    /// `(J × d)`, one row per slot in ontology order.
    pub slots: Array2<f64>,
    /// Per slot, `(candidates × d)` in ontology value order.
    pub values: Vec<Array2<f64>>,
}

impl SchemaBank {
    pub fn build(schema: &SchemaEncoder, ontology: &Ontology, vocab: &Vocabulary) -> Self {
        let d = schema.params().config.d_model;
        let mut slots = Array2::zeros((ontology.len(), d));
        let mut values = Vec::with_capacity(ontology.len());
        for j in 0..ontology.len() {
            slots.row_mut(j).assign(&schema.encode(ontology.slot(j), vocab));
            let cands = ontology.values(j);
            let mut m = Array2::zeros((cands.len(), d));
            for (i, v) in cands.iter().enumerate() {
                m.row_mut(i).assign(&schema.encode(v, vocab));
            }
            values.push(m);
        }
        SchemaBank { slots, values }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.nrows()
    }
}

/// Activations of the head kept for its backward pass.
pub struct HeadCache {
    attention: AttentionCache,
    projected_in: Array2<f64>,
    ln: LayerNormCache,
}

impl HeadCache {
    /// Concatenated attention outputs `r` before the attention's output projection.
    pub fn attention_concat(&self) -> &Array2<f64> {
        self.attention.concat()
    }
}

impl HeadParams {
    /// `w = LayerNorm(Linear(MultiHead(q, H, H)))` for every query row.
    pub fn slot_features(&self, queries: &Array2<f64>, context: &EncoderOutput) -> (Array2<f64>, HeadCache) {
        let (r, attention) = self
            .attention
            .forward(queries, &context.hidden, &context.mask, self.n_heads);
        let u = linear(&r.view(), &self.w_proj, &self.b_proj);
        let (w, ln) = layer_norm(&u, &self.ln_gamma, &self.ln_beta);
        (
            w,
            HeadCache {
                attention,
                projected_in: r,
                ln,
            },
        )
    }

    /// Accumulates head gradients and returns `dL/dH`.
    pub fn backward(&self, cache: &HeadCache, d_features: &Array2<f64>, grads: &mut HeadParams) -> Array2<f64> {
        let du = layer_norm_backward(d_features, &cache.ln, &self.ln_gamma, &mut grads.ln_gamma, &mut grads.ln_beta);
        let dr = linear_backward(&cache.projected_in.view(), &self.w_proj, &du, &mut grads.w_proj, &mut grads.b_proj);
        let (_, d_hidden) = self.attention.backward(&cache.attention, &dr, &mut grads.attention, false);
        d_hidden
    }
}

/// Feature vector of a single slot.
pub fn slot_feature(head: &HeadParams, slot_vector: ArrayView1<f64>, context: &EncoderOutput) -> Array1<f64> {
    let q = slot_vector.to_owned().insert_axis(Axis(0));
    let (w, _) = head.slot_features(&q, context);
    w.row(0).to_owned()
}

/// Probabilities `∝ exp(−‖w − h_v‖₂)` over one slot's candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueDistribution {
    pub probs: Vec<f64>,
    pub distances: Vec<f64>,
}

impl ValueDistribution {
    /// `log P(i)` evaluated from the distances without forming `ln(probs[i])`.
    pub fn log_prob(&self, i: usize) -> f64 {
        let min = self.distances.iter().copied().fold(f64::INFINITY, f64::min);
        let lse = self.distances.iter().map(|d| (min - d).exp()).sum::<f64>().ln();
        (min - self.distances[i]) - lse
    }

    /// Nearest candidate; ties resolve to the lowest index.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.distances.iter().enumerate() {
            if d < self.distances[best] {
                best = i;
            }
        }
        best
    }
}

pub fn distances(w: ArrayView1<f64>, values: &Array2<f64>) -> Vec<f64> {
    values
        .rows()
        .into_iter()
        .map(|v| w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

/// Softmax over negative distances, shifted by the smallest distance.
pub fn value_distribution(w: ArrayView1<f64>, values: &Array2<f64>) -> ValueDistribution {
    let distances = distances(w, values);
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = exps.iter().sum();
    ValueDistribution {
        probs: exps.iter().map(|e| e / total).collect(),
        distances,
    }
}

/// `−log P(gold)` and its gradient with respect to `w`.
pub fn nll_and_grad(w: ArrayView1<f64>, values: &Array2<f64>, gold: usize) -> (f64, Array1<f64>) {
    let dist = value_distribution(w, values);
    let loss = -dist.log_prob(gold);
    let mut grad = Array1::zeros(w.len());
    for (i, v) in values.rows().into_iter().enumerate() {
        let d = dist.distances[i];
        if d == 0.0 {
            continue;
        }
        let coeff = (if i == gold { 1.0 } else { 0.0 } - dist.probs[i]) / d;
        grad.scaled_add(coeff, &(&w - &v));
    }
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotDistribution {
    pub slot: String,
    pub distribution: ValueDistribution,
}

/// `Σ_j −log P(gold_j)`, summed over slots.
pub fn dst_loss(per_slot: &[SlotDistribution], gold: &DialogueState, ontology: &Ontology) -> Result<f64> {
    if per_slot.len() != ontology.len() || gold.len() != ontology.len() {
        return Err(Error::Alignment(format!(
            "{} distributions and {} gold values for {} slots",
            per_slot.len(),
            gold.len(),
            ontology.len()
        )));
    }
    let indices = gold.value_indices(ontology)?;
    Ok(per_slot
        .iter()
        .zip(indices)
        .map(|(s, i)| -s.distribution.log_prob(i))
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnPrediction {
    pub state: DialogueState,
    pub per_slot: Vec<SlotDistribution>,
}

/// Per-slot distributions for an already-encoded context.
pub fn slot_distributions(head: &HeadParams, context: &EncoderOutput, bank: &SchemaBank) -> Vec<ValueDistribution> {
    let (w, _) = head.slot_features(&bank.slots, context);
    w.rows()
        .into_iter()
        .zip(&bank.values)
        .map(|(row, values)| value_distribution(row, values))
        .collect()
}

/// Decodes one turn with dropout off: nearest candidate per slot.
pub fn predict_turn(
    model: &DstModel,
    context: &TokenSequence,
    ontology: &Ontology,
    bank: &SchemaBank,
) -> Result<TurnPrediction> {
    let (encoded, _) = model.context.forward_ids(context.ids(), DropoutPlan::off())?;
    let dists = slot_distributions(&model.head, &encoded, bank);
    let indices: Vec<usize> = dists.iter().map(ValueDistribution::argmin).collect();
    let state = DialogueState::from_indices(ontology, &indices);
    let per_slot = dists
        .into_iter()
        .enumerate()
        .map(|(j, distribution)| SlotDistribution {
            slot: ontology.slot(j).to_string(),
            distribution,
        })
        .collect();
    Ok(TurnPrediction { state, per_slot })
}

/// Sequential decoding; each turn's context carries the previous prediction.
pub fn predict_dialogue(
    model: &DstModel,
    bank: &SchemaBank,
    dialogue: &Dialogue,
    ontology: &Ontology,
    vocab: &Vocabulary,
) -> Result<Vec<TurnPrediction>> {
    let max_len = model.context.config.max_len;
    let mut out: Vec<TurnPrediction> = Vec::with_capacity(dialogue.turns.len());
    let mut prev = DialogueState::empty(ontology);
    for (t, turn) in dialogue.turns.iter().enumerate() {
        let ctx = serialize_context(&dialogue.turns[..t], &prev, turn, ontology, vocab, max_len)?;
        let pred = predict_turn(model, &ctx, ontology, bank)?;
        prev = pred.state.clone();
        out.push(pred);
    }
    Ok(out)
}

/// Predicted states keyed by dialogue id, turns in order.
pub type PredictedStates = BTreeMap<String, Vec<DialogueState>>;

/// Decodes every dialogue; dialogues run in parallel, results keyed by id.
pub fn predict_corpus(
    model: &DstModel,
    bank: &SchemaBank,
    dialogues: &[Dialogue],
    ontology: &Ontology,
    vocab: &Vocabulary,
) -> Result<PredictedStates> {
    let per_dialogue: Vec<Result<(String, Vec<DialogueState>)>> = dialogues
        .par_iter()
        .map(|d| {
            let preds = predict_dialogue(model, bank, d, ontology, vocab)?;
            Ok((d.id.clone(), preds.into_iter().map(|p| p.state).collect()))
        })
        .collect();
    per_dialogue.into_iter().collect()
}

#[derive(Serialize, Deserialize)]
struct DumpTurn {
    turn: usize,
    state: BTreeMap<String, String>,
}

/// `{"dialogue_id": [{"turn": t, "state": {slot: value}}]}`, non-"none" slots only,
/// turns numbered from 0.
pub fn predictions_to_json(preds: &PredictedStates, ontology: &Ontology) -> serde_json::Value {
    let dump: BTreeMap<&String, Vec<DumpTurn>> = preds
        .iter()
        .map(|(id, states)| {
            let turns = states
                .iter()
                .enumerate()
                .map(|(t, s)| DumpTurn {
                    turn: t,
                    state: s.to_map(ontology),
                })
                .collect();
            (id, turns)
        })
        .collect();
    serde_json::to_value(dump).expect("prediction dump serializes")
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &PredictedStates, ontology: &Ontology) -> Result<()> {
    write_json(path.as_ref(), &predictions_to_json(preds, ontology))
}

pub fn load_predictions(path: impl AsRef<Path>, ontology: &Ontology) -> Result<PredictedStates> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let dump: BTreeMap<String, Vec<DumpTurn>> = serde_json::from_str(&text).map_err(|e| Error::json(path, &e))?;
    dump.into_iter()
        .map(|(id, mut turns)| {
            turns.sort_by_key(|t| t.turn);
            for (expected, t) in turns.iter().enumerate() {
                if t.turn != expected {
                    return Err(Error::Alignment(format!(
                        "dialogue {id:?}: turn numbers must run 0..n, found {}",
                        t.turn
                    )));
                }
            }
            let states = turns
                .iter()
                .map(|t| DialogueState::from_map(ontology, &t.state, &id, t.turn))
                .collect::<Result<Vec<_>>>()?;
            Ok((id, states))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;

    use super::*;
    use crate::testutil::{central_difference, relative_error};

    fn output(hidden: Array2<f64>, mask: Vec<bool>) -> EncoderOutput {
        EncoderOutput { hidden, mask }
    }

    #[test]
    fn single_candidate_gets_all_mass() {
        let d = value_distribution(array![1.0, 2.0].view(), &array![[5.0, -1.0]]);
        assert_eq!(d.probs, vec![1.0]);
    }

    #[test]
    fn two_candidates_at_distance_one_and_two() {
        // w at the origin, candidates at distance 1 and 2
        let d = value_distribution(array![0.0, 0.0].view(), &array![[1.0, 0.0], [0.0, 2.0]]);
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((d.probs[0] - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((d.probs[1] - e2 / (e1 + e2)).abs() < 1e-12);
        assert!((d.probs[0] - 0.7311).abs() < 1e-4);
        assert!((d.probs[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn equidistant_candidates_split_evenly() {
        let d = value_distribution(array![0.0, 0.0].view(), &array![[1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(d.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let d = ValueDistribution {
            probs: vec![0.1, 0.1, 0.3, 0.1, 0.1, 0.3],
            distances: vec![3.0, 3.0, 1.0, 3.0, 3.0, 1.0],
        };
        assert_eq!(d.argmin(), 2);
    }

    fn two_slot_ontology() -> Ontology {
        Ontology::new(vec![
            ("a-x".into(), vec!["none".into(), "p".into(), "q".into()]),
            ("b-y".into(), vec!["none".into(), "r".into(), "s".into(), "t".into()]),
        ])
        .unwrap()
    }

    fn with_probs(probs: &[f64]) -> ValueDistribution {
        // distances reproducing the given probabilities exactly up to a shift
        ValueDistribution {
            probs: probs.to_vec(),
            distances: probs.iter().map(|p| -p.ln()).collect(),
        }
    }

    #[test]
    fn dst_loss_sums_over_slots() {
        let o = two_slot_ontology();
        let mut gold = DialogueState::empty(&o);
        gold.set(&o, 0, "p").unwrap();
        gold.set(&o, 1, "t").unwrap();
        let per_slot = vec![
            SlotDistribution {
                slot: "a-x".into(),
                distribution: with_probs(&[0.25, 0.5, 0.25]),
            },
            SlotDistribution {
                slot: "b-y".into(),
                distribution: with_probs(&[0.25, 0.25, 0.25, 0.25]),
            },
        ];
        let loss = dst_loss(&per_slot, &gold, &o).unwrap();
        assert!((loss - 2.0794415416798357).abs() < 1e-9, "{loss}");
        assert!((loss - (-(0.5f64).ln() - (0.25f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn dst_loss_is_zero_for_certain_predictions() {
        let o = two_slot_ontology();
        let gold = DialogueState::empty(&o);
        let certain = |n: usize| ValueDistribution {
            probs: (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
            distances: (0..n).map(|i| if i == 0 { 0.0 } else { 1e6 }).collect(),
        };
        let per_slot = vec![
            SlotDistribution {
                slot: "a-x".into(),
                distribution: certain(3),
            },
            SlotDistribution {
                slot: "b-y".into(),
                distribution: certain(4),
            },
        ];
        assert_eq!(dst_loss(&per_slot, &gold, &o).unwrap(), 0.0);
    }

    #[test]
    fn uniform_binary_slots_cost_ln2_each() {
        let entries = (0..30).map(|j| (format!("d-s{j:02}"), vec!["none".to_string(), "v".to_string()])).collect();
        let o = Ontology::new(entries).unwrap();
        let per_slot: Vec<_> = (0..30)
            .map(|j| SlotDistribution {
                slot: o.slot(j).to_string(),
                distribution: with_probs(&[0.5, 0.5]),
            })
            .collect();
        let loss = dst_loss(&per_slot, &DialogueState::empty(&o), &o).unwrap();
        assert!((loss - 30.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_visible_row_attends_to_itself() {
        let head = init_head(4, 1, 3).unwrap();
        let v = array![0.3, -1.0, 0.5, 2.0];
        let mut hidden = Array2::zeros((3, 4));
        hidden.row_mut(0).assign(&v);
        hidden.row_mut(1).fill(9.0);
        hidden.row_mut(2).fill(-4.0);
        let ctx = output(hidden, vec![true, false, false]);
        let q = array![[1.0, 2.0, 3.0, 4.0]];
        let (_, cache) = head.slot_features(&q, &ctx);
        let expected = v.dot(&head.attention.w_v) + &head.attention.b_v;
        for (a, b) in cache.attention_concat().row(0).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_rows_are_inert() {
        let head = init_head(4, 2, 3).unwrap();
        let base = array![[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.0, 2.0], [5.0, 5.0, 5.0, 5.0], [-3.0, 1.0, 2.0, 0.0]];
        let mut permuted = base.clone();
        permuted.row_mut(2).assign(&base.row(3));
        permuted.row_mut(3).assign(&base.row(2));
        let mask = vec![true, true, false, false];
        let h = array![0.5, -0.5, 1.0, 0.0];
        let a = slot_feature(&head, h.view(), &output(base, mask.clone()));
        let b = slot_feature(&head, h.view(), &output(permuted, mask));
        assert_eq!(a, b);
    }

    /// Hand-set d=4, single-head fixture evaluated step by step.
    #[test]
    fn hand_computed_slot_feature() {
        let mut head = HeadParams::zeros(4, 1);
        let eye = Array2::<f64>::eye(4);
        head.attention.w_q = eye.clone();
        head.attention.w_k = eye.clone();
        head.attention.w_v = eye.clone();
        head.attention.w_o = eye.clone();
        head.w_proj = eye.clone() * 2.0;
        head.b_proj = array![0.0, 0.0, 0.0, 1.0];
        head.ln_gamma = Array1::ones(4);
        let hidden = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let q = array![2.0, 0.0, 0.0, 0.0];
        // scores = q·k / sqrt(4) = [1, 0]; weights = [e/(e+1), 1/(e+1)]
        let e = 1f64.exp();
        let a0 = e / (e + 1.0);
        let a1 = 1.0 / (e + 1.0);
        let u = [2.0 * a0, 2.0 * a1, 0.0, 1.0];
        let mean = u.iter().sum::<f64>() / 4.0;
        let var = u.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        let expected: Vec<f64> = u.iter().map(|x| (x - mean) / (var + 1e-12).sqrt()).collect();
        let w = slot_feature(&head, q.view(), &output(hidden, vec![true, true]));
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{w:?} vs {expected:?}");
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let values = array![[0.3, -0.2, 1.0], [1.5, 0.0, -0.7], [-1.0, 0.4, 0.2], [0.0, 0.0, 0.0]];
        let w = array![0.2, 0.1, -0.4];
        for gold in 0..4 {
            let (_, g) = nll_and_grad(w.view(), &values, gold);
            for k in 0..3 {
                let h = 1e-6;
                let mut wp = w.clone();
                wp[k] += h;
                let mut wm = w.clone();
                wm[k] -= h;
                let fd = (nll_and_grad(wp.view(), &values, gold).0 - nll_and_grad(wm.view(), &values, gold).0) / (2.0 * h);
                assert!(relative_error(g[k], fd) < 1e-6, "gold {gold} dim {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut head = init_head(8, 2, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jitter = Normal::new(0.0, 0.4).unwrap();
        head.visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v + jitter.sample(&mut rng)));
        let hidden = Array2::from_shape_fn((5, 8), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 3.0 - 1.0);
        let ctx = output(hidden, vec![true, true, true, true, false]);
        let queries = Array2::from_shape_fn((3, 8), |(i, j)| ((i + 2 * j) % 5) as f64 / 2.0 - 1.0);
        let values: Vec<Array2<f64>> = (0..3)
            .map(|s| Array2::from_shape_fn((3, 8), |(i, j)| ((s + i * 7 + j) % 6) as f64 / 2.5 - 1.2))
            .collect();
        let gold = [0usize, 2, 1];
        let loss = |h: &HeadParams| {
            let (w, _) = h.slot_features(&queries, &ctx);
            (0..3).map(|j| nll_and_grad(w.row(j), &values[j], gold[j]).0).sum::<f64>()
        };
        let (w, cache) = head.slot_features(&queries, &ctx);
        let mut dw = Array2::zeros(w.raw_dim());
        for j in 0..3 {
            dw.row_mut(j).assign(&nll_and_grad(w.row(j), &values[j], gold[j]).1);
        }
        let mut grads = head.zeros_like();
        head.backward(&cache, &dw, &mut grads);
        for i in 0..head.num_params() {
            let numeric = central_difference(&mut head, i, 1e-5, &loss);
            let rel = relative_error(grads.get_flat(i), numeric);
            assert!(rel < 1e-4, "{}: {} vs {numeric}", head.flat_owner(i), grads.get_flat(i));
        }
    }

    proptest! {
        #[test]
        fn shift_invariance_and_argmax(dists in proptest::collection::vec(0.0f64..50.0, 1..12), shift in 0.0f64..100.0) {
            let softmax = |ds: &[f64]| {
                let m = ds.iter().copied().fold(f64::INFINITY, f64::min);
                let e: Vec<f64> = ds.iter().map(|d| (m - d).exp()).collect();
                let t: f64 = e.iter().sum();
                e.into_iter().map(|x| x / t).collect::<Vec<_>>()
            };
            let shifted: Vec<f64> = dists.iter().map(|d| d + shift).collect();
            let a = softmax(&dists);
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let vd = ValueDistribution { probs: a.clone(), distances: dists.clone() };
            let argmax = a.iter().enumerate().fold(0, |best, (i, p)| if *p > a[best] { i } else { best });
            prop_assert_eq!(vd.argmin(), argmax);
        }

        #[test]
        fn moving_toward_a_candidate_never_lowers_it(
            seed in any::<u64>(),
            target in 0usize..4,
            step in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 1.0).unwrap();
            let values = Array2::from_shape_fn((4, 5), |_| n.sample(&mut rng));
            let w = Array1::from_shape_fn(5, |_| n.sample(&mut rng));
            let moved = &w + &((&values.row(target) - &w) * step);
            let before = value_distribution(w.view(), &values).probs[target];
            let after = value_distribution(moved.view(), &values).probs[target];
            prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
        }
    }
}
