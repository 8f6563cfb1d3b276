use super::dialogue::{DialogueState, Turn};
use super::ontology::Ontology;
use super::vocab::{tokenize, Vocabulary, CLS, PAD, SEP};
use crate::error::{Error, Result};

/// Token ids of a serialized context, starting with `[CLS]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Wraps raw ids, checking the `[CLS] ... [SEP] ... [SEP] [PAD]*` layout.
    pub fn new(ids: Vec<u32>, max_len: usize) -> Result<Self> {
        if ids.len() > max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len,
            });
        }
        if ids.first() != Some(&CLS) {
            return Err(Error::Config("token sequence must start with [CLS]".into()));
        }
        let seps = ids.iter().filter(|&&i| i == SEP).count();
        if seps < 2 {
            return Err(Error::Config("token sequence needs two [SEP] markers".into()));
        }
        let content = ids.iter().rposition(|&i| i != PAD).unwrap_or(0);
        if ids[..content].contains(&PAD) {
            return Err(Error::Config("[PAD] before the end of the sequence".into()));
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `true` for every non-PAD position.
    pub fn mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i != PAD).collect()
    }

    /// Right-pads to `len` with `[PAD]`.
    pub fn padded(&self, len: usize) -> TokenSequence {
        let mut ids = self.ids.clone();
        ids.resize(len.max(ids.len()), PAD);
        TokenSequence { ids }
    }
}

/// Tokens of the sparse state: `domain - slot value` for every active slot.
pub fn state_tokens(state: &DialogueState, ontology: &Ontology, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = Vec::new();
    for (j, value) in state.active() {
        out.extend(tokenize(ontology.slot(j), vocab));
        out.extend(tokenize(value, vocab));
    }
    out
}

fn turn_tokens(turn: &Turn, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = tokenize(&turn.system_utterance, vocab);
    out.extend(tokenize(&turn.user_utterance, vocab));
    out
}

/// Builds `[CLS] history prev_state [SEP] current [SEP]`.
///
/// When the result would exceed `max_len`, the oldest history tokens are
/// dropped; state, current turn and markers are never truncated.
pub fn serialize_context(
    history: &[Turn],
    prev_state: &DialogueState,
    current: &Turn,
    ontology: &Ontology,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    let state = state_tokens(prev_state, ontology, vocab);
    let now = turn_tokens(current, vocab);
    let required = state.len() + now.len() + 3;
    if required > max_len {
        return Err(Error::Capacity { required, max_len });
    }

    let mut past: Vec<u32> = history.iter().flat_map(|t| turn_tokens(t, vocab)).collect();
    let budget = max_len - required;
    if past.len() > budget {
        past.drain(..past.len() - budget);
    }

    let mut ids = Vec::with_capacity(required + past.len());
    ids.push(CLS);
    ids.extend(past);
    ids.extend(state);
    ids.push(SEP);
    ids.extend(now);
    ids.push(SEP);
    Ok(TokenSequence { ids })
}
