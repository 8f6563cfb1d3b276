//! Dialogue corpus, ontology, tokenizer, context serialization and few-shot splits.

mod context;
mod dialogue;
mod ontology;
mod split;
mod vocab;

pub use context::{serialize_context, state_tokens, TokenSequence};
pub use dialogue::{corpus_to_json, load_corpus, load_dialogue_ids, parse_corpus, save_corpus, Dialogue, DialogueState, Turn};
pub use ontology::{Ontology, DONTCARE, NONE};
pub use split::{pool_size, split_few_shot, split_ids, FewShotSplit};
pub use vocab::{build_vocabulary, split_words, tokenize, Vocabulary, CLS, PAD, SEP, UNK};

/// Load an ontology file.
pub fn load_ontology(path: impl AsRef<std::path::Path>) -> crate::Result<Ontology> {
    Ontology::load(path)
}
