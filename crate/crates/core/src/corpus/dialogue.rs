use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ontology::{Ontology, NONE};
use crate::error::{read_file, write_json, Error, Result};

/// Complete slot assignment for one turn, aligned with the ontology's slot order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DialogueState {
    values: Vec<String>,
}

impl DialogueState {
    /// All slots set to "none".
    pub fn empty(ontology: &Ontology) -> Self {
        DialogueState {
            values: vec![NONE.to_string(); ontology.len()],
        }
    }

    /// Builds a state from a partial map; missing slots are "none".
    pub fn from_map(
        ontology: &Ontology,
        map: &BTreeMap<String, String>,
        dialogue: &str,
        turn: usize,
    ) -> Result<Self> {
        let mut state = DialogueState::empty(ontology);
        for (slot, value) in map {
            let idx = ontology.slot_index(slot).ok_or_else(|| Error::UnknownSlot {
                dialogue: dialogue.to_string(),
                turn,
                slot: slot.clone(),
            })?;
            if ontology.value_index(idx, value).is_none() {
                return Err(Error::UnknownValue {
                    dialogue: dialogue.to_string(),
                    turn,
                    slot: slot.clone(),
                    value: value.clone(),
                });
            }
            state.values[idx] = value.clone();
        }
        Ok(state)
    }

    /// Builds a state from per-slot value indices.
    pub fn from_indices(ontology: &Ontology, indices: &[usize]) -> Self {
        assert_eq!(indices.len(), ontology.len());
        DialogueState {
            values: indices
                .iter()
                .enumerate()
                .map(|(j, &i)| ontology.values(j)[i].clone())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot_idx: usize) -> &str {
        &self.values[slot_idx]
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    /// Sets a slot value after checking it against the ontology.
    pub fn set(&mut self, ontology: &Ontology, slot_idx: usize, value: &str) -> Result<()> {
        if ontology.value_index(slot_idx, value).is_none() {
            return Err(Error::GoldNotInOntology {
                slot: ontology.slot(slot_idx).to_string(),
                value: value.to_string(),
            });
        }
        self.values[slot_idx] = value.to_string();
        Ok(())
    }

    /// Non-"none" assignments as `(slot index, value)` in slot order.
    pub fn active(&self) -> impl Iterator<Item = (usize, &str)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.as_str() != NONE)
            .map(|(i, v)| (i, v.as_str()))
    }

    /// Sparse map form: non-"none" slots only.
    pub fn to_map(&self, ontology: &Ontology) -> BTreeMap<String, String> {
        self.active()
            .map(|(i, v)| (ontology.slot(i).to_string(), v.to_string()))
            .collect()
    }

    /// Index of each slot's value within the slot's candidate list.
    pub fn value_indices(&self, ontology: &Ontology) -> Result<Vec<usize>> {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                ontology
                    .value_index(j, v)
                    .ok_or_else(|| Error::GoldNotInOntology {
                        slot: ontology.slot(j).to_string(),
                        value: v.clone(),
                    })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub system_utterance: String,
    pub user_utterance: String,
    pub gold_state: Option<DialogueState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub labeled: bool,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        let labeled = !turns.is_empty() && turns.iter().all(|t| t.gold_state.is_some());
        Dialogue {
            id: id.into(),
            turns,
            labeled,
        }
    }

    /// Copy with every gold state removed, as consumed by the unlabeled pool.
    pub fn without_labels(&self) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| Turn {
                    gold_state: None,
                    ..t.clone()
                })
                .collect(),
            labeled: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::InvalidTurn {
                dialogue: self.id.clone(),
                turn: 0,
                message: "dialogue has no turns".into(),
            });
        }
        for (t, turn) in self.turns.iter().enumerate() {
            if turn.user_utterance.trim().is_empty() {
                return Err(Error::InvalidTurn {
                    dialogue: self.id.clone(),
                    turn: t,
                    message: "empty user utterance".into(),
                });
            }
            if t > 0 && turn.system_utterance.trim().is_empty() {
                return Err(Error::InvalidTurn {
                    dialogue: self.id.clone(),
                    turn: t,
                    message: "empty system utterance after the first turn".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Deserialize, Serialize)]
struct RawCorpus {
    dialogues: Vec<RawDialogue>,
}

#[derive(Deserialize, Serialize)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Deserialize, Serialize)]
struct RawTurn {
    system: String,
    user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<BTreeMap<String, String>>,
}

/// Parses a dataset JSON string, validating every state against the ontology.
pub fn parse_corpus(text: &str, ontology: &Ontology, source: &Path) -> Result<Vec<Dialogue>> {
    let raw: RawCorpus = serde_json::from_str(text).map_err(|e| Error::json(source, &e))?;
    let mut seen = std::collections::HashSet::new();
    raw.dialogues
        .into_iter()
        .map(|d| {
            if !seen.insert(d.id.clone()) {
                return Err(Error::InvalidTurn {
                    dialogue: d.id.clone(),
                    turn: 0,
                    message: "duplicate dialogue id".into(),
                });
            }
            let turns = d
                .turns
                .into_iter()
                .enumerate()
                .map(|(t, rt)| {
                    let gold_state = rt
                        .state
                        .map(|m| DialogueState::from_map(ontology, &m, &d.id, t))
                        .transpose()?;
                    Ok(Turn {
                        system_utterance: rt.system,
                        user_utterance: rt.user,
                        gold_state,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let dialogue = Dialogue::new(d.id, turns);
            dialogue.validate()?;
            Ok(dialogue)
        })
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    parse_corpus(&text, ontology, path)
}

#[derive(Deserialize)]
struct IdOnly {
    id: String,
}

#[derive(Deserialize)]
struct IdCorpus {
    dialogues: Vec<IdOnly>,
}

/// Dialogue ids of a dataset file, in file order, without state validation.
pub fn load_dialogue_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let raw: IdCorpus = serde_json::from_str(&read_file(path)?).map_err(|e| Error::json(path, &e))?;
    Ok(raw.dialogues.into_iter().map(|d| d.id).collect())
}

pub fn corpus_to_json(dialogues: &[Dialogue], ontology: &Ontology) -> serde_json::Value {
    let raw = RawCorpus {
        dialogues: dialogues
            .iter()
            .map(|d| RawDialogue {
                id: d.id.clone(),
                turns: d
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        system: t.system_utterance.clone(),
                        user: t.user_utterance.clone(),
                        state: t.gold_state.as_ref().map(|s| s.to_map(ontology)),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_value(raw).expect("corpus serializes")
}

pub fn save_corpus(path: impl AsRef<Path>, dialogues: &[Dialogue], ontology: &Ontology) -> Result<()> {
    write_json(path.as_ref(), &corpus_to_json(dialogues, ontology))
}
