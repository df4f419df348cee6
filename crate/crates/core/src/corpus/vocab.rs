use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledExample, TagSet};
use crate::error::{Error, Result};
use crate::layers::{TokenBatch, UNK_ID};
use crate::task::TaskId;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Token vocabulary. Ids 0 and 1 are reserved for padding and unknown
/// tokens; the rest are ordered by descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_freq: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut counted: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(t, n)| n >= min_freq.max(1) && t != PAD && t != UNK)
            .collect();
        counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(counted.into_iter().map(|(t, _)| t.to_string()));
        Self::from(tokens)
    }

    pub fn from_examples(examples: &[LabeledExample], min_freq: usize) -> Self {
        Self::build(examples.iter().map(|e| e.tokens.as_slice()), min_freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Token and label ids of one example. Tasks without gold labels are absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub tokens: Vec<usize>,
    pub labels: BTreeMap<TaskId, Vec<usize>>,
}

pub fn encode_corpus(
    examples: &[LabeledExample],
    vocab: &Vocab,
    tagsets: &BTreeMap<TaskId, TagSet>,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| {
            let mut labels = BTreeMap::new();
            for (&task, tags) in tagsets {
                if let Some(l) = e.labels(task) {
                    labels.insert(task, tags.encode(l)?);
                }
            }
            Ok(EncodedExample {
                tokens: vocab.encode(&e.tokens),
                labels,
            })
        })
        .collect()
}

/// Example order for one epoch: a seeded shuffle, or corpus order.
pub fn batch_order(n: usize, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// A padded batch with per-task gold labels for the examples that have them.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub indices: Vec<usize>,
    pub tokens: TokenBatch,
    pub labels: BTreeMap<TaskId, Vec<Vec<usize>>>,
}

impl PaddedBatch {
    pub fn from_examples(corpus: &[EncodedExample], indices: &[usize]) -> Result<Self> {
        let seqs: Vec<&[usize]> = indices
            .iter()
            .map(|&i| corpus[i].tokens.as_slice())
            .collect();
        let mut labels: BTreeMap<TaskId, Vec<Vec<usize>>> = BTreeMap::new();
        for task in TaskId::ALL {
            let present: Vec<Option<&Vec<usize>>> = indices
                .iter()
                .map(|&i| corpus[i].labels.get(&task))
                .collect();
            if present.iter().all(Option::is_some) && !present.is_empty() {
                labels.insert(task, present.into_iter().flatten().cloned().collect());
            } else if present.iter().any(Option::is_some) {
                return Err(Error::MissingGoldLabels {
                    task: task.to_string(),
                });
            }
        }
        Ok(Self {
            indices: indices.to_vec(),
            tokens: TokenBatch::new(&seqs),
            labels,
        })
    }
}

/// Splits the corpus into batches of at most `batch_size` examples.
pub fn batches(
    corpus: &[EncodedExample],
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<PaddedBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    batch_order(corpus.len(), seed, shuffle)
        .chunks(batch_size)
        .map(|idx| PaddedBatch::from_examples(corpus, idx))
        .collect()
}
