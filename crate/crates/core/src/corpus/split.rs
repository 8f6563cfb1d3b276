use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dialogue::Dialogue;
use crate::error::{read_json, write_json, Error, Result};

/// Labeled / unlabeled / unused partition of the training dialogues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub seed: u64,
    pub ratio: f64,
    #[serde(rename = "labeled")]
    pub labeled_ids: Vec<String>,
    #[serde(rename = "unlabeled")]
    pub unlabeled_ids: Vec<String>,
    #[serde(rename = "rest")]
    pub rest_ids: Vec<String>,
}

impl FewShotSplit {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let split: FewShotSplit = read_json(path.as_ref())?;
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn len(&self) -> usize {
        self.labeled_ids.len() + self.unlabeled_ids.len() + self.rest_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self
            .labeled_ids
            .iter()
            .chain(&self.unlabeled_ids)
            .chain(&self.rest_ids)
        {
            if !seen.insert(id) {
                return Err(Error::Split(format!("dialogue {id:?} appears in two pools")));
            }
        }
        Ok(())
    }

    /// Partitions `dialogues` into (labeled, unlabeled-with-gold-removed).
    ///
    /// Every id in the split must exist in `dialogues`; pool order follows the split.
    pub fn apply(&self, dialogues: &[Dialogue]) -> Result<(Vec<Dialogue>, Vec<Dialogue>)> {
        let by_id: std::collections::HashMap<&str, &Dialogue> =
            dialogues.iter().map(|d| (d.id.as_str(), d)).collect();
        let fetch = |id: &String| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Split(format!("dialogue {id:?} not found in the corpus")))
        };
        let labeled = self
            .labeled_ids
            .iter()
            .map(|id| fetch(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = self
            .unlabeled_ids
            .iter()
            .map(|id| fetch(id).map(Dialogue::without_labels))
            .collect::<Result<Vec<_>>>()?;
        Ok((labeled, unlabeled))
    }
}

/// Round-half-away-from-zero count for `fraction` of `n`.
pub fn pool_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Seeded shuffle of `ids`, then the first `round(ratio·N)` are labeled and
/// the next `round(unlabeled_fraction·N)` unlabeled.
pub fn split_ids(ids: &[String], ratio: f64, unlabeled_fraction: f64, seed: u64) -> Result<FewShotSplit> {
    let valid = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
    if !valid(ratio) || !valid(unlabeled_fraction) {
        return Err(Error::Split("fractions must lie in [0, 1]".into()));
    }
    if ratio + unlabeled_fraction > 1.0 + 1e-9 {
        return Err(Error::Split(format!(
            "labeled ({ratio}) + unlabeled ({unlabeled_fraction}) exceed the corpus"
        )));
    }
    let n = ids.len();
    let n_labeled = pool_size(ratio, n);
    if n_labeled == 0 {
        return Err(Error::EmptyLabeledPool);
    }
    let n_unlabeled = pool_size(unlabeled_fraction, n).min(n - n_labeled);

    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != n {
        return Err(Error::Split("duplicate dialogue ids".into()));
    }

    let mut order = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let rest_ids = order.split_off(n_labeled + n_unlabeled);
    let unlabeled_ids = order.split_off(n_labeled);
    Ok(FewShotSplit {
        seed,
        ratio,
        labeled_ids: order,
        unlabeled_ids,
        rest_ids,
    })
}

pub fn split_few_shot(
    dialogues: &[Dialogue],
    ratio: f64,
    unlabeled_fraction: f64,
    seed: u64,
) -> Result<FewShotSplit> {
    if let Some(d) = dialogues.iter().find(|d| !d.labeled) {
        return Err(Error::Split(format!(
            "dialogue {:?} is unlabeled; the split expects a fully labeled training set",
            d.id
        )));
    }
    let ids: Vec<String> = dialogues.iter().map(|d| d.id.clone()).collect();
    split_ids(&ids, ratio, unlabeled_fraction, seed)
}
