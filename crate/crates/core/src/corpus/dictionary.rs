use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named-entity types a slot type may map to.
pub const NE_TYPES: [&str; 3] = ["PV", "PK", "CG"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DictEntry {
    pub term: Vec<String>,
    pub slot_type: String,
}

impl DictEntry {
    pub fn new(term: Vec<String>, slot_type: impl Into<String>) -> Self {
        Self {
            term,
            slot_type: slot_type.into(),
        }
    }
}

/// Term → slot type dictionary plus the slot type → entity type map.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    entries: Vec<DictEntry>,
    type_map: BTreeMap<String, String>,
    lookup: HashMap<Vec<String>, usize>,
    max_len: usize,
}

impl Dictionary {
    /// Identical duplicate entries collapse; a term listed under two slot
    /// types is an error, as is a slot type missing from the type map.
    pub fn new(entries: Vec<DictEntry>, type_map: BTreeMap<String, String>) -> Result<Self> {
        for (slot, ne) in &type_map {
            if !NE_TYPES.contains(&ne.as_str()) {
                return Err(Error::Dictionary(format!(
                    "slot type `{slot}` maps to `{ne}`; entity types are {NE_TYPES:?}"
                )));
            }
        }
        let mut kept: Vec<DictEntry> = Vec::with_capacity(entries.len());
        let mut lookup: HashMap<Vec<String>, usize> = HashMap::new();
        for e in entries {
            if e.term.is_empty() {
                return Err(Error::Dictionary(format!(
                    "empty term for slot type `{}`",
                    e.slot_type
                )));
            }
            if !type_map.contains_key(&e.slot_type) {
                return Err(Error::Dictionary(format!(
                    "slot type `{}` has no entity type",
                    e.slot_type
                )));
            }
            match lookup.get(&e.term) {
                Some(&i) if kept[i].slot_type == e.slot_type => continue,
                Some(&i) => {
                    return Err(Error::Dictionary(format!(
                        "term `{}` listed as both `{}` and `{}`",
                        e.term.concat(),
                        kept[i].slot_type,
                        e.slot_type
                    )))
                }
                None => {
                    lookup.insert(e.term.clone(), kept.len());
                    kept.push(e);
                }
            }
        }
        let max_len = kept.iter().map(|e| e.term.len()).max().unwrap_or(0);
        Ok(Self {
            entries: kept,
            type_map,
            lookup,
            max_len,
        })
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn type_map(&self) -> &BTreeMap<String, String> {
        &self.type_map
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_term_len(&self) -> usize {
        self.max_len
    }

    pub fn slot_type(&self, term: &[String]) -> Option<&str> {
        self.lookup
            .get(term)
            .map(|&i| self.entries[i].slot_type.as_str())
    }

    pub fn contains(&self, term: &[String]) -> bool {
        self.lookup.contains_key(term)
    }

    /// Terms of one slot type, in entry order.
    pub fn terms_of(&self, slot_type: &str) -> Vec<&[String]> {
        self.entries
            .iter()
            .filter(|e| e.slot_type == slot_type)
            .map(|e| e.term.as_slice())
            .collect()
    }

    /// A dictionary over a subset of the entries, sharing the type map.
    pub fn subset(&self, entries: Vec<DictEntry>) -> Result<Self> {
        Self::new(entries, self.type_map.clone())
    }
}

/// Seeded uniform partition of the entries into three disjoint parts whose
/// sizes differ by at most one.
pub fn split_dictionary(dict: &Dictionary, seed: u64) -> Result<[Dictionary; 3]> {
    let n = dict.len();
    if n < 3 {
        return Err(Error::Dictionary(format!(
            "need at least 3 entries to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts: [Vec<DictEntry>; 3] = Default::default();
    let mut offset = 0;
    for (k, part) in parts.iter_mut().enumerate() {
        let size = n / 3 + usize::from(k < n % 3);
        let mut idx = order[offset..offset + size].to_vec();
        idx.sort_unstable();
        *part = idx.into_iter().map(|i| dict.entries[i].clone()).collect();
        offset += size;
    }
    let [a, b, c] = parts;
    Ok([dict.subset(a)?, dict.subset(b)?, dict.subset(c)?])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn term(s: &str) -> Vec<String> {
        s.chars().map(String::from).collect()
    }

    fn types() -> BTreeMap<String, String> {
        [("Brand", "PV"), ("Color", "PV"), ("CG", "CG")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn rejects_conflicts_and_unmapped_types() {
        let conflict = vec![
            DictEntry::new(term("ab"), "Brand"),
            DictEntry::new(term("ab"), "Color"),
        ];
        assert!(Dictionary::new(conflict, types()).is_err());
        let unmapped = vec![DictEntry::new(term("ab"), "Size")];
        assert!(Dictionary::new(unmapped, types()).is_err());
        let mut bad_map = types();
        bad_map.insert("Size".into(), "XX".into());
        assert!(Dictionary::new(vec![], bad_map).is_err());
        let dup = vec![
            DictEntry::new(term("ab"), "Brand"),
            DictEntry::new(term("ab"), "Brand"),
        ];
        assert_eq!(Dictionary::new(dup, types()).unwrap().len(), 1);
    }

    fn nine() -> Dictionary {
        let entries = (0..9)
            .map(|i| DictEntry::new(term(&format!("t{i}")), ["Brand", "Color", "CG"][i % 3]))
            .collect();
        Dictionary::new(entries, types()).unwrap()
    }

    #[test]
    fn split_is_balanced_disjoint_and_seeded() {
        let d = nine();
        let parts = split_dictionary(&d, 7).unwrap();
        assert_eq!(
            parts.iter().map(Dictionary::len).collect::<Vec<_>>(),
            vec![3, 3, 3]
        );
        let mut union = BTreeSet::new();
        for p in &parts {
            for e in p.entries() {
                assert!(union.insert(e.clone()), "parts overlap");
            }
        }
        assert_eq!(union, d.entries().iter().cloned().collect());
        assert_eq!(split_dictionary(&d, 7).unwrap(), parts);
        assert_ne!(split_dictionary(&d, 8).unwrap(), parts);
    }

    #[test]
    fn split_sizes_for_uneven_counts() {
        let entries: Vec<_> = (0..10)
            .map(|i| DictEntry::new(term(&format!("u{i}")), "CG"))
            .collect();
        let d = Dictionary::new(entries, types()).unwrap();
        let sizes: Vec<_> = split_dictionary(&d, 0)
            .unwrap()
            .iter()
            .map(Dictionary::len)
            .collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let small = Dictionary::new(vec![DictEntry::new(term("a"), "CG")], types()).unwrap();
        assert!(split_dictionary(&small, 0).is_err());
    }
}
