//! Templated synthetic corpora that a small encoder can learn.
//!
//! Every value is a made-up word unique across the whole ontology, and each
//! user turn names its new values with the template
//! `i want <value> for the <domain> <slot>`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_corpus, Dialogue, DialogueState, Ontology, Turn};
use crate::error::{Error, Result};

const DOMAINS: [&str; 8] = ["hotel", "taxi", "train", "restaurant", "attraction", "hospital", "police", "bus"];
const SLOTS: [&str; 10] = ["area", "price", "stars", "day", "people", "time", "name", "type", "parking", "internet"];
const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const SYSTEM_PROMPTS: [&str; 3] = ["anything else ?", "noted . what else ?", "sure . can i help with more ?"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domains: usize,
    pub slots_per_domain: usize,
    pub values_per_slot: usize,
    pub dialogues: usize,
    pub turns: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("domains", self.domains),
            ("slots-per-domain", self.slots_per_domain),
            ("values-per-slot", self.values_per_slot),
            ("dialogues", self.dialogues),
            ("turns", self.turns),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

pub struct SynthCorpus {
    pub ontology: Ontology,
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

fn name(list: &[&str], i: usize, fallback: &str) -> String {
    list.get(i).map_or_else(|| format!("{fallback}{i}"), |s| s.to_string())
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn build_ontology(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Ontology> {
    let mut used: HashSet<String> = DOMAINS.iter().chain(&SLOTS).map(|s| s.to_string()).collect();
    used.extend(["none", "dontcare", "i", "want", "for", "the"].map(String::from));
    let mut entries = Vec::new();
    for d in 0..cfg.domains {
        for s in 0..cfg.slots_per_domain {
            let slot = format!("{}-{}", name(&DOMAINS, d, "domain"), name(&SLOTS, s, "slot"));
            let mut values = Vec::with_capacity(cfg.values_per_slot);
            while values.len() < cfg.values_per_slot {
                let w = pseudo_word(rng);
                if used.insert(w.clone()) {
                    values.push(w);
                }
            }
            entries.push((slot, values));
        }
    }
    Ontology::new(entries)
}

fn mention(slot: &str, value: &str) -> String {
    let (domain, name) = slot.split_once('-').expect("synthetic slots contain a dash");
    format!("i want {value} for the {domain} {name}")
}

fn dialogue(id: String, cfg: &SynthConfig, ontology: &Ontology, rng: &mut ChaCha8Rng) -> Dialogue {
    let domains = ontology.domains();
    let n_active = rng.random_range(1..=domains.len().min(2));
    let active: Vec<&String> = domains.choose_multiple(rng, n_active).collect();
    let mut slots: Vec<usize> = active.iter().flat_map(|d| ontology.domain_slots(d)).collect();
    slots.sort_unstable();

    let mut state = DialogueState::empty(ontology);
    let mut turns = Vec::with_capacity(cfg.turns);
    for t in 0..cfg.turns {
        let unset: Vec<usize> = slots.iter().copied().filter(|&j| state.get(j) == "none").collect();
        let pool = if unset.is_empty() { &slots } else { &unset };
        let k = rng.random_range(1..=pool.len().min(2));
        let mut chosen: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
        chosen.sort_unstable();
        let mut parts = Vec::with_capacity(k);
        for j in chosen {
            let candidates: Vec<&String> = ontology.values(j)[1..].iter().filter(|v| *v != state.get(j)).collect();
            let value = candidates.choose(rng).copied().unwrap_or(&ontology.values(j)[1]).clone();
            state.set(ontology, j, &value).expect("value from the ontology");
            parts.push(mention(ontology.slot(j), &value));
        }
        let system = if t == 0 {
            String::new()
        } else {
            SYSTEM_PROMPTS.choose(rng).unwrap().to_string()
        };
        turns.push(Turn {
            system_utterance: system,
            user_utterance: parts.join(" and "),
            gold_state: Some(state.clone()),
        });
    }
    Dialogue::new(id, turns)
}

/// Generates the corpus and splits it 80/10/10 into train, validation and test.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ontology = build_ontology(cfg, &mut rng)?;
    let mut all: Vec<Dialogue> = (0..cfg.dialogues)
        .map(|i| dialogue(format!("synth-{i:05}"), cfg, &ontology, &mut rng))
        .collect();
    all.shuffle(&mut rng);
    let n_valid = cfg.dialogues / 10;
    let n_test = cfg.dialogues / 10;
    let test = all.split_off(cfg.dialogues - n_test);
    let valid = all.split_off(all.len() - n_valid);
    let sorted = |mut v: Vec<Dialogue>| {
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    Ok(SynthCorpus {
        ontology,
        train: sorted(all),
        valid: sorted(valid),
        test: sorted(test),
    })
}

/// Writes `train.json`, `valid.json`, `test.json` and `ontology.json` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<BTreeMap<&'static str, std::path::PathBuf>> {
    let mut paths = BTreeMap::new();
    for (key, file, dialogues) in [
        ("train", "train.json", &corpus.train),
        ("valid", "valid.json", &corpus.valid),
        ("test", "test.json", &corpus.test),
    ] {
        let path = dir.join(file);
        save_corpus(&path, dialogues, &corpus.ontology)?;
        paths.insert(key, path);
    }
    let path = dir.join("ontology.json");
    corpus.ontology.save(&path)?;
    paths.insert("ontology", path);
    Ok(paths)
}
