use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{read_file, write_json, Error, Result};

pub const NONE: &str = "none";
pub const DONTCARE: &str = "dontcare";

/// The slot schema: every domain-slot pair and its candidate values.
///
/// Slots are kept in lexicographic order so that the ordering does not depend
/// on how the ontology file happened to be written. Every value list starts
/// with [`NONE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Ontology {
    slots: Vec<String>,
    values: Vec<Vec<String>>,
    slot_index: HashMap<String, usize>,
    value_index: Vec<HashMap<String, usize>>,
}

impl Ontology {
    /// Builds an ontology from `(slot, values)` entries in any order.
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Ontology("no slots".into()));
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Ontology(format!("duplicate slot {:?}", pair[0].0)));
            }
        }

        let mut slots = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (slot, mut list) in entries {
            if slot.trim().is_empty() {
                return Err(Error::Ontology("empty slot id".into()));
            }
            if list.is_empty() {
                return Err(Error::Ontology(format!("slot {slot:?} has an empty value list")));
            }
            list.retain(|v| v != NONE);
            list.insert(0, NONE.to_string());
            let mut seen = std::collections::HashSet::new();
            for v in &list {
                if v.trim().is_empty() {
                    return Err(Error::Ontology(format!("slot {slot:?} has an empty value")));
                }
                if !seen.insert(v.as_str()) {
                    return Err(Error::Ontology(format!(
                        "slot {slot:?} lists value {v:?} more than once"
                    )));
                }
            }
            if list.len() < 2 {
                return Err(Error::Ontology(format!(
                    "slot {slot:?} needs at least one value besides \"none\""
                )));
            }
            slots.push(slot);
            values.push(list);
        }

        let slot_index = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let value_index = values
            .iter()
            .map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i))
                    .collect()
            })
            .collect();
        Ok(Ontology {
            slots,
            values,
            slot_index,
            value_index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let raw: RawOntology = serde_json::from_str(&text).map_err(|e| Error::json(path, &e))?;
        Ontology::new(raw.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Number of slots (J).
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn slot(&self, idx: usize) -> &str {
        &self.slots[idx]
    }

    pub fn values(&self, slot_idx: usize) -> &[String] {
        &self.values[slot_idx]
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slot_index.get(slot).copied()
    }

    pub fn value_index(&self, slot_idx: usize, value: &str) -> Option<usize> {
        self.value_index[slot_idx].get(value).copied()
    }

    /// Domain part of a slot id: everything before the first `-`.
    pub fn domain_of(slot: &str) -> &str {
        slot.split_once('-').map_or(slot, |(d, _)| d)
    }

    /// Distinct domains in slot order.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.slots {
            let d = Ontology::domain_of(s);
            if !out.iter().any(|x| x == d) {
                out.push(d.to_string());
            }
        }
        out
    }

    /// Indices of the slots belonging to `domain`.
    pub fn domain_slots(&self, domain: &str) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| Ontology::domain_of(s) == domain)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Serialize for Ontology {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.slots.len()))?;
        for (slot, values) in self.slots.iter().zip(&self.values) {
            map.serialize_entry(slot, values)?;
        }
        map.end()
    }
}

/// Ontology entries in file order, duplicates preserved so they can be rejected.
struct RawOntology(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for RawOntology {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawOntology;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping slot ids to value lists")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawOntology, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    entries.push((k, v));
                }
                Ok(RawOntology(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}
