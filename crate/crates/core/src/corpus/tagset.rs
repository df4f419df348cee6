use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::eval::split_label;
use crate::task::TaskId;

/// `I-X` may only follow `B-X` or `I-X`.
pub fn validate_iob<S: AsRef<str>>(labels: &[S]) -> Result<()> {
    let mut prev: Option<(char, &str)> = None;
    for (i, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let (p, t) = split_label(l);
        if p == 'O' && l != "O" {
            return Err(Error::Labels(format!("`{l}` at {i} is not an IOB label")));
        }
        if p == 'I' && !matches!(prev, Some((pp, pt)) if pp != 'O' && pt == t) {
            return Err(Error::Labels(format!(
                "`{l}` at {i} does not continue a chunk"
            )));
        }
        prev = Some((p, t));
    }
    Ok(())
}

/// Closed label vocabulary of one task with stable ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    task: TaskId,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new(task: TaskId, labels: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        if index.len() != labels.len() {
            return Err(Error::Labels(format!(
                "{task} tag set has duplicate labels"
            )));
        }
        if !index.contains_key("O") {
            return Err(Error::Labels(format!("{task} tag set lacks `O`")));
        }
        if task == TaskId::Seg {
            let set: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
            if set != BTreeSet::from(["O", "B", "I"]) {
                return Err(Error::Labels(format!(
                    "segment tag set must be exactly O, B, I; got {labels:?}"
                )));
            }
        } else {
            for l in &labels {
                let (p, t) = split_label(l);
                if l != "O" && (p == 'O' || t.is_empty()) {
                    return Err(Error::Labels(format!("`{l}` is not a typed IOB label")));
                }
                if p != 'O'
                    && !(index.contains_key(&format!("B-{t}"))
                        && index.contains_key(&format!("I-{t}")))
                {
                    return Err(Error::Labels(format!(
                        "{task} tag set needs both B-{t} and I-{t}"
                    )));
                }
            }
        }
        Ok(Self {
            task,
            labels,
            index,
        })
    }

    /// Canonical tag set: `O`, then `B-X`, `I-X` for each type in sorted order.
    pub fn from_types<'a>(task: TaskId, types: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        if task == TaskId::Seg {
            return Self::new(task, vec!["O".into(), "B".into(), "I".into()]);
        }
        let types: BTreeSet<&str> = types.into_iter().collect();
        let mut labels = vec!["O".to_string()];
        for t in types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        Self::new(task, labels)
    }

    /// Canonical tag set covering every label of `task` in the examples.
    pub fn from_examples(task: TaskId, examples: &[super::LabeledExample]) -> Result<Self> {
        let mut types = BTreeSet::new();
        for ex in examples {
            for l in ex.labels(task).unwrap_or_default() {
                let (p, t) = split_label(l);
                if p != 'O' {
                    types.insert(t.to_string());
                }
            }
        }
        Self::from_types(task, types.iter().map(String::as_str))
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.id(l.as_ref()).ok_or_else(|| {
                    Error::Labels(format!(
                        "label `{}` is not in the {} tag set {:?}",
                        l.as_ref(),
                        self.task,
                        self.labels
                    ))
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.labels[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iob_validity() {
        assert!(validate_iob(&["B-X", "I-X", "O", "B-Y"]).is_ok());
        assert!(validate_iob(&["B", "I", "I"]).is_ok());
        assert!(validate_iob(&["I-X"]).is_err());
        assert!(validate_iob(&["B-X", "I-Y"]).is_err());
        assert!(validate_iob(&["O", "I"]).is_err());
        assert!(validate_iob(&["Q-X"]).is_err());
    }

    #[test]
    fn tag_set_invariants() {
        let t = TagSet::from_types(TaskId::Ne, ["PV", "CG"]).unwrap();
        assert_eq!(t.labels(), &["O", "B-CG", "I-CG", "B-PV", "I-PV"]);
        assert_eq!(t.id("B-PV"), Some(3));
        assert_eq!(
            TagSet::from_types(TaskId::Seg, []).unwrap().labels(),
            &["O", "B", "I"]
        );
        assert!(TagSet::new(TaskId::Slot, vec!["O".into(), "B-X".into()]).is_err());
        assert!(TagSet::new(TaskId::Slot, vec!["B-X".into(), "I-X".into()]).is_err());
        assert!(TagSet::new(TaskId::Seg, vec!["O".into(), "B".into()]).is_err());
        assert!(t.encode(&["B-XX"]).is_err());
    }
}
