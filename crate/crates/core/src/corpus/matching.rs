use std::collections::BTreeMap;
use std::fmt;

use super::{Dictionary, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::split_label;

/// A dictionary term occurrence covering tokens `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub slot_type: String,
}

/// Non-overlapping term occurrences, in order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Segmentation {
    pub spans: Vec<Span>,
}

impl Segmentation {
    pub fn cover(&self) -> usize {
        self.spans.iter().map(|s| s.end - s.start).sum()
    }

    /// IOB slot labels over `len` tokens; uncovered positions are `O`.
    pub fn slot_labels(&self, len: usize) -> Vec<String> {
        let mut out = vec!["O".to_string(); len];
        for s in &self.spans {
            out[s.start] = format!("B-{}", s.slot_type);
            for l in &mut out[s.start + 1..s.end] {
                *l = format!("I-{}", s.slot_type);
            }
        }
        out
    }
}

/// Every segmentation of maximal total cover. Two segmentations count as
/// distinct only when their slot labelings differ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxMatch {
    pub cover: usize,
    pub segmentations: Vec<Segmentation>,
}

impl MaxMatch {
    pub fn is_ambiguous(&self) -> bool {
        self.segmentations.len() > 1
    }
}

pub fn max_match(tokens: &[String], dict: &Dictionary) -> MaxMatch {
    let n = tokens.len();
    // matches[i]: (length, slot type) of every term starting at i.
    let matches: Vec<Vec<(usize, &str)>> = (0..n)
        .map(|i| {
            (1..=dict.max_term_len().min(n - i))
                .filter_map(|len| dict.slot_type(&tokens[i..i + len]).map(|t| (len, t)))
                .collect()
        })
        .collect();
    // best[i]: maximal cover of the suffix starting at i.
    let mut best = vec![0usize; n + 1];
    for i in (0..n).rev() {
        best[i] = best[i + 1];
        for &(len, _) in &matches[i] {
            best[i] = best[i].max(len + best[i + len]);
        }
    }

    let mut found: BTreeMap<Vec<String>, Segmentation> = BTreeMap::new();
    let mut stack = Vec::new();
    collect(0, n, &matches, &best, &mut stack, &mut found);
    MaxMatch {
        cover: best[0],
        segmentations: found.into_values().collect(),
    }
}

fn collect(
    i: usize,
    n: usize,
    matches: &[Vec<(usize, &str)>],
    best: &[usize],
    stack: &mut Vec<Span>,
    found: &mut BTreeMap<Vec<String>, Segmentation>,
) {
    if i == n {
        let seg = Segmentation {
            spans: stack.clone(),
        };
        found.entry(seg.slot_labels(n)).or_insert(seg);
        return;
    }
    if best[i + 1] == best[i] {
        collect(i + 1, n, matches, best, stack, found);
    }
    for &(len, t) in &matches[i] {
        if len + best[i + len] == best[i] {
            stack.push(Span {
                start: i,
                end: i + len,
                slot_type: t.to_string(),
            });
            collect(i + len, n, matches, best, stack, found);
            stack.pop();
        }
    }
}

/// Why an utterance was not turned into a training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    /// More than one maximal matching labels the tokens differently.
    Ambiguous { readings: usize },
    /// No token is covered by a dictionary term.
    NoContent,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Ambiguous { readings } => write!(f, "ambiguous ({readings} readings)"),
            Rejection::NoContent => f.write_str("no dictionary term matched"),
        }
    }
}

/// Labels an utterance from the dictionary if its maximal matching is unique.
pub fn annotate(
    tokens: &[String],
    dict: &Dictionary,
) -> std::result::Result<LabeledExample, Rejection> {
    let m = max_match(tokens, dict);
    if m.cover == 0 {
        return Err(Rejection::NoContent);
    }
    if m.is_ambiguous() {
        return Err(Rejection::Ambiguous {
            readings: m.segmentations.len(),
        });
    }
    let slot = m.segmentations[0].slot_labels(tokens.len());
    let (ne, seg) =
        project_labels(&slot, dict.type_map()).expect("dictionary types are all mapped");
    Ok(LabeledExample::new(tokens.to_vec(), slot, Some(ne), seg)
        .expect("matched labels are well formed"))
}

/// Derives entity labels (through the type map) and untyped segment labels
/// from slot labels.
pub fn project_labels<S: AsRef<str>>(
    slot_labels: &[S],
    type_map: &BTreeMap<String, String>,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut ne = Vec::with_capacity(slot_labels.len());
    let mut seg = Vec::with_capacity(slot_labels.len());
    for l in slot_labels {
        let (p, t) = split_label(l.as_ref());
        if p == 'O' {
            ne.push("O".to_string());
            seg.push("O".to_string());
            continue;
        }
        let mapped = type_map
            .get(t)
            .ok_or_else(|| Error::Dictionary(format!("slot type `{t}` has no entity type")))?;
        ne.push(format!("{p}-{mapped}"));
        seg.push(p.to_string());
    }
    Ok((ne, seg))
}
