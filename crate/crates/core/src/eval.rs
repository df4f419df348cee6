//! Chunk-level precision, recall and F1 for IOB label sequences.
//!
//! Ill-formed input follows the conlleval conventions: an `I-X` that does not
//! continue an open `X` chunk starts a new chunk of type `X`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled span; `end` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

/// Splits `B-Color` into (`B`, `Color`); untyped `B`/`I`/`O` give an empty type.
pub fn split_label(label: &str) -> (char, &str) {
    match label.split_once('-') {
        Some((p, t)) if p == "B" || p == "I" => (p.chars().next().unwrap(), t),
        _ => match label {
            "B" => ('B', ""),
            "I" => ('I', ""),
            _ => ('O', ""),
        },
    }
}

pub fn extract_chunks<S: AsRef<str>>(labels: &[S]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, label) in labels.iter().enumerate() {
        let (prefix, kind) = split_label(label.as_ref());
        let continues = prefix == 'I' && matches!(open, Some((_, k)) if k == kind);
        if !continues {
            if let Some((start, k)) = open.take() {
                chunks.push(Chunk {
                    start,
                    end: i - 1,
                    kind: k.to_string(),
                });
            }
            if prefix != 'O' {
                open = Some((i, kind));
            }
        }
    }
    if let Some((start, k)) = open {
        chunks.push(Chunk {
            start,
            end: labels.len() - 1,
            kind: k.to_string(),
        });
    }
    chunks
}

/// IOB encoding of non-overlapping chunks over `len` positions.
pub fn encode_chunks(chunks: &[Chunk], len: usize) -> Vec<String> {
    let mut out = vec!["O".to_string(); len];
    for c in chunks {
        let tag = |p: &str| {
            if c.kind.is_empty() {
                p.to_string()
            } else {
                format!("{p}-{}", c.kind)
            }
        };
        out[c.start] = tag("B");
        for slot in &mut out[c.start + 1..=c.end] {
            *slot = tag("I");
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl From<Counts> for TypeScore {
    fn from(counts: Counts) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
        }
    }
}

/// Micro-averaged chunk scores plus a per-type breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeScore>,
    /// Auxiliary token-level accuracy.
    pub token_accuracy: f64,
}

pub fn prf1<S: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<S>]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Labels(format!(
            "{} gold utterances but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    let (mut tokens, mut token_hits) = (0usize, 0usize);
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Labels(format!(
                "utterance {i}: {} gold labels but {} predicted",
                g.len(),
                p.len()
            )));
        }
        tokens += g.len();
        token_hits += g
            .iter()
            .zip(p)
            .filter(|(a, b)| a.as_ref() == b.as_ref())
            .count();
        let gc: BTreeSet<Chunk> = extract_chunks(g).into_iter().collect();
        let pc: BTreeSet<Chunk> = extract_chunks(p).into_iter().collect();
        for c in &gc {
            per_type.entry(c.kind.clone()).or_default().gold += 1;
        }
        for c in &pc {
            per_type.entry(c.kind.clone()).or_default().predicted += 1;
        }
        for c in gc.intersection(&pc) {
            per_type.entry(c.kind.clone()).or_default().correct += 1;
        }
        total.gold += gc.len();
        total.predicted += pc.len();
        total.correct += gc.intersection(&pc).count();
    }
    Ok(EvalReport {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        counts: total,
        per_type: per_type.into_iter().map(|(k, c)| (k, c.into())).collect(),
        token_accuracy: ratio(token_hits, tokens),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "type", "precision", "recall", "f1", "gold", "pred", "correct"
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, p: f64, r: f64, f1: f64, c: &Counts| {
            writeln!(
                f,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                name, p, r, f1, c.gold, c.predicted, c.correct
            )
        };
        for (kind, s) in &self.per_type {
            let name = if kind.is_empty() { "(chunk)" } else { kind };
            row(f, name, s.precision, s.recall, s.f1, &s.counts)?;
        }
        row(
            f,
            "overall",
            self.precision,
            self.recall,
            self.f1,
            &self.counts,
        )?;
        write!(f, "token accuracy {:.4}", self.token_accuracy)
    }
}
