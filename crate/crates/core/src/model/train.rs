use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaggingModel, Topology};
use crate::corpus::{EncodedExample, PaddedBatch};
use crate::error::{Error, Result};
use crate::numeric::{clip_global_norm, AdamState, Graph, Real};
use crate::task::TaskId;

/// One optimizer step of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub epoch: usize,
    /// Task whose loss was optimized; absent for the vanilla unified loss.
    pub task: Option<TaskId>,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Hooks called during training.
pub trait TrainObserver {
    fn step(&mut self, _record: &TraceRecord) {}

    /// Called after each epoch (1-based) with the current model.
    fn epoch_end(&mut self, _epoch: usize, _model: &TaggingModel) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects the trace in memory.
impl TrainObserver for Vec<TraceRecord> {
    fn step(&mut self, record: &TraceRecord) {
        self.push(record.clone());
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    /// Last loss seen per optimized objective (`unified` for vanilla).
    pub final_losses: BTreeMap<String, f64>,
}

/// Endless reshuffled pass over the examples that carry one task's labels.
struct TaskStream {
    examples: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl TaskStream {
    fn new(examples: Vec<usize>) -> Self {
        Self {
            order: Vec::new(),
            pos: 0,
            examples,
        }
    }

    /// Next batch; a pass ends with a short batch before reshuffling.
    fn next_batch<R: Rng>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = self.examples.clone();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Uniform choice of the task trained at each step.
pub struct TaskSampler {
    tasks: Vec<TaskId>,
    rng: ChaCha8Rng,
}

impl TaskSampler {
    pub fn new(tasks: Vec<TaskId>, seed: u64) -> Self {
        Self {
            tasks,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> TaskId {
        self.tasks[self.rng.gen_range(0..self.tasks.len())]
    }
}

/// Steps per epoch: enough batches to cover the slot corpus once.
pub fn steps_per_epoch(slot_examples: usize, batch_size: usize) -> usize {
    slot_examples.div_ceil(batch_size)
}

/// Trains in place. Basic trains slot only; vanilla optimizes the unified
/// loss on batches of fully labeled examples; hierarchy and dcmtl pick a
/// task uniformly per step and draw a batch from that task's corpus.
pub fn train(
    model: &mut TaggingModel,
    optimizer: &mut AdamState,
    corpus: &[EncodedExample],
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    let config = model.config().clone();
    let tasks = model.tasks();
    let has = |e: &EncodedExample, t: &TaskId| e.labels.contains_key(t);
    let mut streams = BTreeMap::new();
    for &task in &tasks {
        // A batch for `task` also needs gold tags of every cascade source
        // below it, and vanilla batches need every task.
        let mut needed = vec![task];
        if config.topology == Topology::Vanilla {
            needed = tasks.clone();
        }
        needed.extend(
            model
                .cascades()
                .iter()
                .filter(|c| c.to <= task)
                .map(|c| c.from),
        );
        let idx: Vec<usize> = (0..corpus.len())
            .filter(|&i| !corpus[i].tokens.is_empty() && needed.iter().all(|t| has(&corpus[i], t)))
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no training examples with {task} labels"
            )));
        }
        streams.insert(task, TaskStream::new(idx));
    }
    let slot_count = streams[&TaskId::Slot].examples.len();
    let per_epoch = steps_per_epoch(slot_count, config.batch_size);
    let mut sampler = TaskSampler::new(tasks.clone(), config.seed ^ 0x7a5c);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c);
    let mut summary = TrainSummary {
        epochs: config.epochs,
        ..Default::default()
    };
    for epoch in 1..=config.epochs {
        for _ in 0..per_epoch {
            let task = match config.topology {
                Topology::Hierarchy | Topology::Dcmtl => sampler.sample(),
                Topology::Basic | Topology::Vanilla => TaskId::Slot,
            };
            let indices = streams
                .get_mut(&task)
                .unwrap()
                .next_batch(config.batch_size, &mut batch_rng);
            let batch = PaddedBatch::from_examples(corpus, &indices)?;
            let (loss, mut grads) = {
                let mut g = Graph::new(model.params());
                let loss = model.step_loss(&mut g, &batch.tokens, &batch.labels, task)?;
                (g.value(loss).item(), g.backward(loss)?)
            };
            summary.steps += 1;
            let label = match config.topology {
                Topology::Vanilla => None,
                _ => Some(task),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: summary.steps,
                    task: label.map_or("unified".into(), |t| t.to_string()),
                    loss: loss as f64,
                });
            }
            let norm = clip_global_norm(&mut grads, config.clip as Real);
            optimizer.step(model.params_mut(), &grads, config.lr as Real)?;
            let record = TraceRecord {
                step: summary.steps,
                epoch,
                task: label,
                loss: loss as f64,
                grad_norm: norm as f64,
            };
            summary.final_losses.insert(
                label.map_or("unified".into(), |t| t.to_string()),
                record.loss,
            );
            observer.step(&record);
        }
        observer.epoch_end(epoch, model)?;
    }
    Ok(summary)
}
