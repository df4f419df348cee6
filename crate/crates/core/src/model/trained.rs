use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, ModelConfig, TaggingModel, TrainObserver, TrainSummary};
use crate::corpus::{encode_corpus, LabeledExample, TagSet, Tokenization, Vocab};
use crate::error::{Error, Result};
use crate::eval::{prf1, EvalReport};
use crate::layers::TokenBatch;
use crate::numeric::{AdamState, NamedParam};
use crate::task::TaskId;

const FORMAT: &str = "dcmtl-model";
const VERSION: u32 = 1;

/// Labels predicted for one utterance, per task head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Prediction {
    pub labels: BTreeMap<TaskId, Vec<String>>,
}

impl Prediction {
    pub fn slot(&self) -> &[String] {
        &self.labels[&TaskId::Slot]
    }

    pub fn task(&self, task: TaskId) -> Option<&[String]> {
        self.labels.get(&task).map(Vec::as_slice)
    }
}

/// A network together with everything needed to apply it to raw text.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    model: TaggingModel,
    vocab: Vocab,
    tagsets: BTreeMap<TaskId, TagSet>,
    tokenization: Tokenization,
    summary: TrainSummary,
    optimizer: AdamState,
}

/// Applies a network to text through a vocabulary and tag sets.
#[derive(Clone, Copy, Debug)]
pub struct Predictor<'a> {
    pub model: &'a TaggingModel,
    pub vocab: &'a Vocab,
    pub tagsets: &'a BTreeMap<TaskId, TagSet>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        model: &'a TaggingModel,
        vocab: &'a Vocab,
        tagsets: &'a BTreeMap<TaskId, TagSet>,
    ) -> Self {
        Self {
            model,
            vocab,
            tagsets,
        }
    }

    /// Labels for one tokenized utterance; empty input gives empty output.
    pub fn predict(&self, tokens: &[String]) -> Result<Prediction> {
        Ok(self
            .predict_batch(std::slice::from_ref(&tokens.to_vec()), 1)?
            .remove(0))
    }

    pub fn predict_batch(
        &self,
        utterances: &[Vec<String>],
        batch_size: usize,
    ) -> Result<Vec<Prediction>> {
        let empty = || Prediction {
            labels: self.tagsets.keys().map(|&t| (t, Vec::new())).collect(),
        };
        let mut out: Vec<Prediction> = utterances.iter().map(|_| empty()).collect();
        let nonempty: Vec<usize> = (0..utterances.len())
            .filter(|&i| !utterances[i].is_empty())
            .collect();
        for chunk in nonempty.chunks(batch_size.max(1)) {
            let ids: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| self.vocab.encode(&utterances[i]))
                .collect();
            let seqs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
            let paths = self.model.decode(&TokenBatch::new(&seqs))?;
            for (task, per_seq) in paths {
                for (&i, path) in chunk.iter().zip(per_seq) {
                    out[i]
                        .labels
                        .insert(task, self.tagsets[&task].decode(&path));
                }
            }
        }
        Ok(out)
    }

    /// Chunk scores per task, for every task the corpus is labeled with.
    pub fn evaluate(&self, examples: &[LabeledExample]) -> Result<BTreeMap<TaskId, EvalReport>> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus("evaluation corpus is empty".into()));
        }
        for (&task, tags) in self.tagsets {
            for ex in examples {
                let Some(gold) = ex.labels(task) else {
                    continue;
                };
                if let Some(bad) = gold.iter().find(|l| tags.id(l).is_none()) {
                    let corpus_set = TagSet::from_examples(task, examples)?;
                    return Err(Error::Labels(format!(
                        "{task} label `{bad}` unknown to the model; model tag set {:?}, corpus tag set {:?}",
                        tags.labels(),
                        corpus_set.labels()
                    )));
                }
            }
        }
        let tokens: Vec<Vec<String>> = examples.iter().map(|e| e.tokens.clone()).collect();
        let predictions = self.predict_batch(&tokens, self.model.config().batch_size)?;
        let mut reports = BTreeMap::new();
        for &task in self.tagsets.keys() {
            if examples.iter().any(|e| e.labels(task).is_none()) {
                continue;
            }
            let gold: Vec<Vec<String>> = examples
                .iter()
                .map(|e| e.labels(task).unwrap().to_vec())
                .collect();
            let pred: Vec<Vec<String>> = predictions
                .iter()
                .map(|p| p.labels[&task].clone())
                .collect();
            reports.insert(task, prf1(&gold, &pred)?);
        }
        Ok(reports)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    tokenization: Tokenization,
    vocab: Vocab,
    tagsets: BTreeMap<TaskId, Vec<String>>,
    training: TrainSummary,
    params: Vec<NamedParam>,
    optimizer: AdamState,
}

impl TrainedModel {
    /// Builds vocabulary and tag sets from `train_set`, initializes a model
    /// from `config` and trains it.
    pub fn fit(
        config: ModelConfig,
        train_set: &[LabeledExample],
        tokenization: Tokenization,
        observer: &mut dyn TrainObserver,
    ) -> Result<Self> {
        let mut me = Self::untrained(config, train_set, tokenization)?;
        me.train(train_set, observer)?;
        Ok(me)
    }

    /// The initialized model `fit` would start from.
    pub fn untrained(
        config: ModelConfig,
        train_set: &[LabeledExample],
        tokenization: Tokenization,
    ) -> Result<Self> {
        config.validate()?;
        if train_set.is_empty() {
            return Err(Error::EmptyCorpus("training corpus is empty".into()));
        }
        let mut tagsets = BTreeMap::new();
        for task in config.tasks() {
            if train_set.iter().all(|e| e.labels(task).is_none()) {
                return Err(Error::MissingGoldLabels {
                    task: task.to_string(),
                });
            }
            tagsets.insert(task, TagSet::from_examples(task, train_set)?);
        }
        let vocab = Vocab::from_examples(train_set, config.min_freq);
        let counts = tagsets.iter().map(|(&t, s)| (t, s.len())).collect();
        let model = TaggingModel::new(config.clone(), vocab.len(), &counts)?;
        let optimizer = AdamState::new(model.params(), config.adam);
        Ok(Self {
            model,
            vocab,
            tagsets,
            tokenization,
            summary: TrainSummary::default(),
            optimizer,
        })
    }

    pub fn model(&self) -> &TaggingModel {
        &self.model
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tagsets(&self) -> &BTreeMap<TaskId, TagSet> {
        &self.tagsets
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn summary(&self) -> &TrainSummary {
        &self.summary
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    /// Runs further training on `train_set` with this model's vocabulary
    /// and tag sets.
    pub fn train(
        &mut self,
        train_set: &[LabeledExample],
        observer: &mut dyn TrainObserver,
    ) -> Result<&TrainSummary> {
        let encoded = encode_corpus(train_set, &self.vocab, &self.tagsets)?;
        let summary = train(&mut self.model, &mut self.optimizer, &encoded, observer)?;
        self.summary.epochs += summary.epochs;
        self.summary.steps += summary.steps;
        self.summary.final_losses.extend(summary.final_losses);
        Ok(&self.summary)
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor::new(&self.model, &self.vocab, &self.tagsets)
    }

    /// Labels for one tokenized utterance; empty input gives empty output.
    pub fn predict(&self, tokens: &[String]) -> Result<Prediction> {
        self.predictor().predict(tokens)
    }

    pub fn predict_batch(
        &self,
        utterances: &[Vec<String>],
        batch_size: usize,
    ) -> Result<Vec<Prediction>> {
        self.predictor().predict_batch(utterances, batch_size)
    }

    /// Chunk scores per task, for every task the corpus is labeled with.
    pub fn evaluate(&self, examples: &[LabeledExample]) -> Result<BTreeMap<TaskId, EvalReport>> {
        self.predictor().evaluate(examples)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config().clone(),
            tokenization: self.tokenization,
            vocab: self.vocab.clone(),
            tagsets: self
                .tagsets
                .iter()
                .map(|(&t, s)| (t, s.labels().to_vec()))
                .collect(),
            training: self.summary.clone(),
            params: self.model.params().to_named(),
            optimizer: self.optimizer.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::Model(format!(
                "expected {FORMAT} version {VERSION}, found {} version {}",
                doc.format, doc.version
            )));
        }
        let mut tagsets = BTreeMap::new();
        for (task, labels) in doc.tagsets {
            tagsets.insert(task, TagSet::new(task, labels)?);
        }
        let counts = tagsets.iter().map(|(&t, s)| (t, s.len())).collect();
        let mut model = TaggingModel::new(doc.config, doc.vocab.len(), &counts)?;
        model.params_mut().load_named(doc.params)?;
        let shapes_match = doc.optimizer.first_moment.len() == model.params().len()
            && doc.optimizer.second_moment.len() == model.params().len()
            && model
                .params()
                .iter()
                .zip(
                    doc.optimizer
                        .first_moment
                        .iter()
                        .zip(&doc.optimizer.second_moment),
                )
                .all(|((_, _, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if !shapes_match {
            return Err(Error::Model(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Self {
            model,
            vocab: doc.vocab,
            tagsets,
            tokenization: doc.tokenization,
            summary: doc.training,
            optimizer: doc.optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
