use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dialogue::Dialogue;
use super::ontology::Ontology;
use crate::error::{Error, Result};

pub const CLS: u32 = 0;
pub const SEP: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["[CLS]", "[SEP]", "[PAD]", "[UNK]"];

/// Lowercases and splits on whitespace; every punctuation character is its
/// own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Dense token-id mapping. Ids 0..4 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(file: VocabFile) -> Result<Self> {
        Vocabulary::from_tokens(file.tokens)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::Config("vocabulary must start with the special tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("vocabulary lists {t:?} twice")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::error::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        crate::error::read_json(path.as_ref())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds the vocabulary from corpus text and ontology strings.
///
/// Ontology tokens are always included; corpus tokens need `min_count`
/// occurrences. Non-special tokens are ordered by descending corpus frequency,
/// then lexicographically.
pub fn build_vocabulary(dialogues: &[Dialogue], ontology: &Ontology, min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for d in dialogues {
        for t in &d.turns {
            for text in [&t.system_utterance, &t.user_utterance] {
                for w in split_words(text) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
    }

    let mut keep: HashMap<String, usize> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    for (j, slot) in ontology.slots().iter().enumerate() {
        let strings = std::iter::once(slot).chain(ontology.values(j));
        for s in strings {
            for w in split_words(s) {
                let c = counts.get(&w).copied().unwrap_or(0);
                keep.entry(w).or_insert(c);
            }
        }
    }

    let mut ranked: Vec<(String, usize)> = keep.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocabulary::from_tokens(tokens).expect("specials are fixed and words are unique")
}

/// Token ids for `text`; unknown words map to [`UNK`].
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    split_words(text)
        .iter()
        .map(|w| vocab.id(w).unwrap_or(UNK))
        .collect()
}
