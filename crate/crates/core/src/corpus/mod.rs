//! Distantly supervised corpus construction and corpus file handling.
//!
//! Utterances are annotated by matching a term dictionary against them: the
//! slot labels come from the unique maximal-cover matching, and the
//! named-entity and segment labels are projected from the slot labels.

mod dictionary;
pub mod io;
mod matching;
pub mod synth;
mod tagset;
mod vocab;

use serde::{Deserialize, Serialize};

pub use dictionary::{split_dictionary, DictEntry, Dictionary, NE_TYPES};
pub use matching::{annotate, max_match, project_labels, MaxMatch, Rejection, Segmentation, Span};
pub use tagset::{validate_iob, TagSet};
pub use vocab::{
    batch_order, batches, encode_corpus, EncodedExample, PaddedBatch, Vocab, PAD, UNK,
};

use crate::error::{Error, Result};
use crate::eval::split_label;
use crate::task::TaskId;

/// How raw text is split into tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// One token per non-whitespace character (unsegmented scripts).
    #[default]
    Char,
    /// One token per whitespace-separated word.
    Word,
}

impl Tokenization {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            Tokenization::Word => text.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn join<S: AsRef<str>>(self, tokens: &[S]) -> String {
        let parts: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        match self {
            Tokenization::Char => parts.concat(),
            Tokenization::Word => parts.join(" "),
        }
    }
}

impl std::str::FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Tokenization::Char),
            "word" => Ok(Tokenization::Word),
            other => Err(Error::Config(format!("unknown tokenization `{other}`"))),
        }
    }
}

/// One utterance with aligned IOB labels for every task. `ne` is absent for
/// corpora without named-entity annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub slot: Vec<String>,
    pub ne: Option<Vec<String>>,
    pub seg: Vec<String>,
}

impl LabeledExample {
    pub fn new(
        tokens: Vec<String>,
        slot: Vec<String>,
        ne: Option<Vec<String>>,
        seg: Vec<String>,
    ) -> Result<Self> {
        let n = tokens.len();
        if slot.len() != n || seg.len() != n || ne.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::Labels(format!(
                "{n} tokens but {} slot, {} seg and {} ne labels",
                slot.len(),
                seg.len(),
                ne.as_ref().map_or(n, Vec::len)
            )));
        }
        validate_iob(&slot)?;
        validate_iob(&seg)?;
        if let Some(ne) = &ne {
            validate_iob(ne)?;
        }
        for (i, s) in seg.iter().enumerate() {
            if !matches!(s.as_str(), "O" | "B" | "I") {
                return Err(Error::Labels(format!(
                    "segment label `{s}` at {i} is not O/B/I"
                )));
            }
            let expected = split_label(s).0;
            let others = std::iter::once(&slot[i]).chain(ne.as_ref().map(|v| &v[i]));
            for other in others {
                if split_label(other).0 != expected {
                    return Err(Error::Labels(format!(
                        "position {i}: `{other}` disagrees with segment label `{s}`"
                    )));
                }
            }
        }
        Ok(Self {
            tokens,
            slot,
            ne,
            seg,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self, task: TaskId) -> Option<&[String]> {
        match task {
            TaskId::Seg => Some(&self.seg),
            TaskId::Ne => self.ne.as_deref(),
            TaskId::Slot => Some(&self.slot),
        }
    }
}
