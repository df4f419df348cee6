use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::AdamConfig;
use crate::task::TaskId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Single-task BiLSTM-CRF on the slot labels.
    Basic,
    /// One shared encoder, a CRF head per task on its top layer, trained on
    /// a weighted sum of the task losses.
    Vanilla,
    /// Each task's head reads its own encoder layer.
    Hierarchy,
    /// Hierarchy plus cascade connections from lower-task tags and residual
    /// connections between layers.
    #[default]
    Dcmtl,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::Basic,
        Topology::Vanilla,
        Topology::Hierarchy,
        Topology::Dcmtl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Basic => "basic",
            Topology::Vanilla => "vanilla",
            Topology::Hierarchy => "hierarchy",
            Topology::Dcmtl => "dcmtl",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown topology `{s}`")))
    }
}

/// Which lower-task tags feed which upper layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CascadeTopology {
    /// seg → slot.
    #[serde(rename = "SLOT+SEG")]
    SlotSeg,
    /// ne → slot.
    #[serde(rename = "SLOT+NE")]
    SlotNe,
    /// seg → ne → slot.
    #[default]
    #[serde(rename = "SLOT+NE+SEG")]
    SlotNeSeg,
}

impl CascadeTopology {
    pub const ALL: [CascadeTopology; 3] = [
        CascadeTopology::SlotSeg,
        CascadeTopology::SlotNe,
        CascadeTopology::SlotNeSeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CascadeTopology::SlotSeg => "SLOT+SEG",
            CascadeTopology::SlotNe => "SLOT+NE",
            CascadeTopology::SlotNeSeg => "SLOT+NE+SEG",
        }
    }

    /// `(from, to)` pairs: decoded `from` tags are added to the input of the
    /// layer that carries `to`.
    pub fn links(self) -> Vec<(TaskId, TaskId)> {
        match self {
            CascadeTopology::SlotSeg => vec![(TaskId::Seg, TaskId::Slot)],
            CascadeTopology::SlotNe => vec![(TaskId::Ne, TaskId::Slot)],
            CascadeTopology::SlotNeSeg => {
                vec![(TaskId::Seg, TaskId::Ne), (TaskId::Ne, TaskId::Slot)]
            }
        }
    }
}

impl fmt::Display for CascadeTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for CascadeTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CascadeTopology::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown cascade topology `{s}`")))
    }
}

fn default_assignment() -> BTreeMap<TaskId, usize> {
    [(TaskId::Seg, 1), (TaskId::Ne, 2), (TaskId::Slot, 3)]
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub topology: Topology,
    /// Stacked BiLSTM layers.
    pub layers: usize,
    /// Hidden size of each LSTM direction.
    pub hidden: usize,
    pub emb_dim: usize,
    /// 1-based encoder layer whose output feeds each task's head. The tasks
    /// listed here are the tasks the model is trained on (basic uses slot
    /// only; vanilla puts every head on the top layer).
    pub layer_assignment: BTreeMap<TaskId, usize>,
    /// Whether dcmtl uses cascade connections at all.
    pub cascade: bool,
    pub cascade_topology: CascadeTopology,
    /// Whether dcmtl adds each layer's input to its output.
    pub residual: bool,
    /// Vanilla loss weight of seg.
    pub alpha: f64,
    /// Vanilla loss weight of ne; slot gets `1 - alpha - beta`.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Global gradient-norm clipping threshold.
    pub clip: f64,
    pub adam: AdamConfig,
    /// Tokens seen fewer times in training map to the unknown token.
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Dcmtl,
            layers: 3,
            hidden: 100,
            emb_dim: 200,
            layer_assignment: default_assignment(),
            cascade: true,
            cascade_topology: CascadeTopology::SlotNeSeg,
            residual: true,
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            batch_size: 32,
            epochs: 10,
            lr: 0.001,
            clip: 5.0,
            adam: AdamConfig::default(),
            min_freq: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Two layers, seg and slot only, for corpora without entity labels.
    pub fn without_ne() -> Self {
        Self {
            layers: 2,
            layer_assignment: [(TaskId::Seg, 1), (TaskId::Slot, 2)].into_iter().collect(),
            cascade_topology: CascadeTopology::SlotSeg,
            ..Self::default()
        }
    }

    /// Tasks with a CRF head, in stacking order.
    pub fn tasks(&self) -> Vec<TaskId> {
        match self.topology {
            Topology::Basic => vec![TaskId::Slot],
            _ => self.layer_assignment.keys().copied().collect(),
        }
    }

    /// 1-based layer read by `task`'s head.
    pub fn layer_of(&self, task: TaskId) -> Option<usize> {
        match self.topology {
            Topology::Basic | Topology::Vanilla => {
                self.tasks().contains(&task).then_some(self.layers)
            }
            Topology::Hierarchy | Topology::Dcmtl => self.layer_assignment.get(&task).copied(),
        }
    }

    /// Active cascade links, empty unless this is a dcmtl model with cascade on.
    pub fn cascade_links(&self) -> Vec<(TaskId, TaskId)> {
        if self.topology == Topology::Dcmtl && self.cascade {
            self.cascade_topology.links()
        } else {
            Vec::new()
        }
    }

    pub fn uses_residual(&self) -> bool {
        self.topology == Topology::Dcmtl && self.residual
    }

    /// Loss weight per task for the vanilla unified loss. Without an ne head
    /// its weight is dropped and the others are used as given.
    pub fn loss_weights(&self) -> BTreeMap<TaskId, f64> {
        let all = [
            (TaskId::Seg, self.alpha),
            (TaskId::Ne, self.beta),
            (TaskId::Slot, 1.0 - self.alpha - self.beta),
        ];
        let tasks = self.tasks();
        all.into_iter().filter(|(t, _)| tasks.contains(t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.hidden == 0 || self.emb_dim == 0 {
            return bad("layers, hidden and emb_dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("{name} must lie in [0, 1], got {w}"));
            }
        }
        if self.alpha + self.beta > 1.0 + 1e-12 {
            return bad(format!(
                "alpha + beta must not exceed 1, got {}",
                self.alpha + self.beta
            ));
        }
        if !self.layer_assignment.contains_key(&TaskId::Slot) {
            return bad("layer_assignment must include slot".into());
        }
        let mut prev = 0;
        for (task, &layer) in &self.layer_assignment {
            if layer == 0 || layer > self.layers {
                return bad(format!(
                    "{task} assigned to layer {layer}, model has {}",
                    self.layers
                ));
            }
            if layer <= prev {
                return bad(
                    "layer_assignment must strictly increase from seg to ne to slot".into(),
                );
            }
            prev = layer;
        }
        if self.topology == Topology::Dcmtl {
            if self.cascade {
                for (from, to) in self.cascade_topology.links() {
                    for t in [from, to] {
                        if !self.layer_assignment.contains_key(&t) {
                            return bad(format!(
                                "cascade topology {} needs a {t} layer",
                                self.cascade_topology
                            ));
                        }
                    }
                }
            }
            if self.residual && self.emb_dim != 2 * self.hidden {
                return bad(format!(
                    "residual connections need emb_dim = 2 * hidden, got {} and {}",
                    self.emb_dim, self.hidden
                ));
            }
        }
        Ok(())
    }
}
