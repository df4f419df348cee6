use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Topology};
use crate::crf::CrfParameters;
use crate::error::{Error, Result};
use crate::layers::{BiLstmLayer, EmbeddingTable, SeqBatch, TokenBatch};
use crate::numeric::{init, Graph, NodeId, ParamId, ParamStore, Real, Tensor};
use crate::task::TaskId;

/// Per-task label ids of a batch, `labels[task][b]` for sequence `b`.
pub type BatchLabels = BTreeMap<TaskId, Vec<Vec<usize>>>;

/// Where cascade tags come from.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Gold labels of the lower tasks (teacher forcing).
    Train(&'a BatchLabels),
    /// Viterbi paths of the lower heads.
    Infer,
}

/// Projection of one-hot lower-task tags into a layer input.
#[derive(Clone, Debug)]
pub struct CascadeLink {
    pub from: TaskId,
    pub to: TaskId,
    pub weight: ParamId,
}

/// Output of a forward pass.
#[derive(Debug, Default)]
pub struct Forward {
    /// Time-major `[steps * batch, labels]` emission nodes.
    pub emissions: BTreeMap<TaskId, NodeId>,
    /// Viterbi paths of lower heads decoded to feed cascades (infer mode).
    pub decoded: BTreeMap<TaskId, Vec<Vec<usize>>>,
}

/// The network of one topology with its parameters.
#[derive(Clone, Debug)]
pub struct TaggingModel {
    config: ModelConfig,
    vocab_size: usize,
    label_counts: BTreeMap<TaskId, usize>,
    params: ParamStore,
    embedding: EmbeddingTable,
    layers: Vec<BiLstmLayer>,
    heads: BTreeMap<TaskId, CrfParameters>,
    cascades: Vec<CascadeLink>,
}

impl TaggingModel {
    /// Registers and initializes every parameter from `config.seed`.
    /// `label_counts` must cover every task the topology trains.
    pub fn new(
        config: ModelConfig,
        vocab_size: usize,
        label_counts: &BTreeMap<TaskId, usize>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config(
                "vocabulary must hold at least <pad> and <unk>".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embedding = EmbeddingTable::register(
            &mut params,
            &mut rng,
            "embedding",
            vocab_size,
            config.emb_dim,
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let input = if l == 1 {
                config.emb_dim
            } else {
                2 * config.hidden
            };
            layers.push(BiLstmLayer::register(
                &mut params,
                &mut rng,
                &format!("bilstm.{l}"),
                input,
                config.hidden,
            )?);
        }
        let mut heads = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for task in config.tasks() {
            let labels = *label_counts
                .get(&task)
                .ok_or_else(|| Error::Config(format!("no label set for task {task}")))?;
            counts.insert(task, labels);
            let head = CrfParameters::register(
                &mut params,
                &mut rng,
                &format!("crf.{task}"),
                2 * config.hidden,
                labels,
            )?;
            heads.insert(task, head);
        }
        let mut cascades = Vec::new();
        for (from, to) in config.cascade_links() {
            let weight = params.register(
                format!("cascade.{from}_{to}.weight"),
                init::xavier_uniform(&mut rng, counts[&from], 2 * config.hidden),
            )?;
            cascades.push(CascadeLink { from, to, weight });
        }
        Ok(Self {
            config,
            vocab_size,
            label_counts: counts,
            params,
            embedding,
            layers,
            heads,
            cascades,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn label_counts(&self) -> &BTreeMap<TaskId, usize> {
        &self.label_counts
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.heads.keys().copied().collect()
    }

    pub fn head(&self, task: TaskId) -> Option<&CrfParameters> {
        self.heads.get(&task)
    }

    pub fn cascades(&self) -> &[CascadeLink] {
        &self.cascades
    }

    /// Runs the encoder bottom-up until every head in `targets` has its
    /// emissions. Heads below the top requested layer are evaluated too.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: &TokenBatch,
        mode: Mode,
        targets: &[TaskId],
    ) -> Result<Forward> {
        for t in targets {
            if !self.heads.contains_key(t) {
                return Err(Error::Config(format!("model has no {t} head")));
            }
        }
        let top = targets
            .iter()
            .filter_map(|&t| self.config.layer_of(t))
            .max()
            .unwrap_or(0);
        let mut out = Forward::default();
        let mut x = self.embedding.embed_batch(g, tokens)?;
        let residual = self.config.uses_residual();
        for (idx, layer) in self.layers.iter().enumerate().take(top) {
            let l = idx + 1;
            let mut input = x.clone();
            for link in self
                .cascades
                .iter()
                .filter(|c| self.config.layer_of(c.to) == Some(l))
            {
                let tags =
                    match mode {
                        Mode::Train(gold) => gold
                            .get(&link.from)
                            .ok_or_else(|| Error::MissingGoldLabels {
                                task: link.from.to_string(),
                            })?
                            .clone(),
                        Mode::Infer => out.decoded.get(&link.from).cloned().ok_or_else(|| {
                            Error::Model(format!("{} decoded after use", link.from))
                        })?,
                    };
                let onehot = g.constant(one_hot(&tags, tokens, self.label_counts[&link.from])?);
                let w = g.param(link.weight);
                let projected = g.matmul(onehot, w)?;
                input = SeqBatch {
                    node: g.add(input.node, projected)?,
                    ..input
                };
            }
            let h = layer.apply(g, &input)?;
            for (&task, head) in &self.heads {
                if self.config.layer_of(task) != Some(l) {
                    continue;
                }
                let em = head.emissions(g, &h)?;
                out.emissions.insert(task, em);
                let feeds_cascade = self.cascades.iter().any(|c| c.from == task);
                if matches!(mode, Mode::Infer) && feeds_cascade {
                    let paths = head.decode_batch(&self.params, g.value(em), &tokens.lengths);
                    out.decoded.insert(task, paths);
                }
            }
            x = if residual {
                SeqBatch {
                    node: g.add(h.node, x.node)?,
                    ..h
                }
            } else {
                h
            };
        }
        Ok(out)
    }

    /// Mean CRF negative log-likelihood of one task on a batch, with gold
    /// lower-task tags feeding the cascades.
    pub fn task_loss(
        &self,
        g: &mut Graph,
        tokens: &TokenBatch,
        gold: &BatchLabels,
        task: TaskId,
    ) -> Result<NodeId> {
        let fwd = self.forward(g, tokens, Mode::Train(gold), &[task])?;
        self.nll(g, &fwd, tokens, gold, task)
    }

    /// Weighted sum of every head's loss (the vanilla objective).
    pub fn unified_loss(
        &self,
        g: &mut Graph,
        tokens: &TokenBatch,
        gold: &BatchLabels,
    ) -> Result<NodeId> {
        let tasks = self.tasks();
        let fwd = self.forward(g, tokens, Mode::Train(gold), &tasks)?;
        let mut total: Option<NodeId> = None;
        for (task, w) in self.config.loss_weights() {
            let nll = self.nll(g, &fwd, tokens, gold, task)?;
            let term = g.scale(nll, w as Real);
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::Model("no loss terms".into()))
    }

    /// The loss one training step optimizes for this topology.
    pub fn step_loss(
        &self,
        g: &mut Graph,
        tokens: &TokenBatch,
        gold: &BatchLabels,
        task: TaskId,
    ) -> Result<NodeId> {
        match self.config.topology {
            Topology::Vanilla => self.unified_loss(g, tokens, gold),
            _ => self.task_loss(g, tokens, gold, task),
        }
    }

    fn nll(
        &self,
        g: &mut Graph,
        fwd: &Forward,
        tokens: &TokenBatch,
        gold: &BatchLabels,
        task: TaskId,
    ) -> Result<NodeId> {
        let labels = gold.get(&task).ok_or_else(|| Error::MissingGoldLabels {
            task: task.to_string(),
        })?;
        let seqs: Vec<&[usize]> = labels.iter().map(Vec::as_slice).collect();
        self.heads[&task].batch_nll(g, fwd.emissions[&task], &tokens.lengths, &seqs)
    }

    /// Viterbi paths of every head, cascades fed by decoded lower tags.
    pub fn decode(&self, tokens: &TokenBatch) -> Result<BTreeMap<TaskId, Vec<Vec<usize>>>> {
        let mut g = Graph::new(&self.params);
        let tasks = self.tasks();
        let fwd = self.forward(&mut g, tokens, Mode::Infer, &tasks)?;
        let mut out = BTreeMap::new();
        for (task, em) in fwd.emissions {
            let paths = match fwd.decoded.get(&task) {
                Some(p) => p.clone(),
                None => self.heads[&task].decode_batch(&self.params, g.value(em), &tokens.lengths),
            };
            out.insert(task, paths);
        }
        Ok(out)
    }

    /// Emission tensors of every head in inference mode.
    pub fn emissions(&self, tokens: &TokenBatch) -> Result<BTreeMap<TaskId, Tensor>> {
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, tokens, Mode::Infer, &self.tasks())?;
        Ok(fwd
            .emissions
            .into_iter()
            .map(|(t, em)| (t, g.value(em).clone()))
            .collect())
    }
}

/// `[steps * batch, labels]` time-major one-hot rows; padded rows are zero.
fn one_hot(tags: &[Vec<usize>], tokens: &TokenBatch, labels: usize) -> Result<Tensor> {
    let batch = tokens.batch();
    if tags.len() != batch {
        return Err(Error::shape(
            "cascade",
            format!("{} tag sequences for batch {batch}", tags.len()),
        ));
    }
    let mut data = vec![0.0; tokens.steps * batch * labels];
    for (b, seq) in tags.iter().enumerate() {
        if seq.len() != tokens.lengths[b] {
            return Err(Error::shape(
                "cascade",
                format!(
                    "sequence {b}: {} tags for {} tokens",
                    seq.len(),
                    tokens.lengths[b]
                ),
            ));
        }
        for (t, &y) in seq.iter().enumerate() {
            if y >= labels {
                return Err(Error::OutOfRange {
                    what: "cascade tag set",
                    index: y,
                    size: labels,
                });
            }
            data[(t * batch + b) * labels + y] = 1.0;
        }
    }
    Tensor::matrix(tokens.steps * batch, labels, data)
}
