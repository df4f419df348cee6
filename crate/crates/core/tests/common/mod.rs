#![allow(dead_code)]

use dcmtl_core::numeric::{Gradients, Graph, NodeId, ParamStore, Tensor};
use dcmtl_core::Result;
use rand::Rng;

pub const H: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .unwrap()
}

/// Worst relative error between analytic gradients and central finite
/// differences over every element of every parameter.
pub fn max_gradient_error<S>(
    state: &mut S,
    store: impl Fn(&mut S) -> &mut ParamStore,
    loss: impl Fn(&S) -> Result<f64>,
    analytic: impl Fn(&S) -> Result<Gradients>,
) -> f64 {
    let grads = analytic(state).unwrap();
    let ids: Vec<_> = store(state)
        .iter()
        .map(|(id, _, t)| (id, t.len()))
        .collect();
    let mut worst: f64 = 0.0;
    for (id, len) in ids {
        for k in 0..len {
            let orig = store(state).get(id).data()[k];
            store(state).get_mut(id).data_mut()[k] = orig + H;
            let plus = loss(state).unwrap();
            store(state).get_mut(id).data_mut()[k] = orig - H;
            let minus = loss(state).unwrap();
            store(state).get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            worst = worst.max(rel_err(grads.get(id).data()[k], numeric));
        }
    }
    worst
}

/// Gradient check for a loss built directly on a parameter store.
pub fn check_store(store: &mut ParamStore, build: impl Fn(&mut Graph) -> Result<NodeId>) -> f64 {
    max_gradient_error(
        store,
        |s| s,
        |s| {
            let mut g = Graph::new(s);
            let l = build(&mut g)?;
            Ok(g.value(l).item())
        },
        |s| {
            let mut g = Graph::new(s);
            let l = build(&mut g)?;
            g.backward(l)
        },
    )
}

use std::collections::BTreeMap;

use dcmtl_core::layers::TokenBatch;
use dcmtl_core::model::{BatchLabels, CascadeTopology, ModelConfig, TaggingModel, Topology};
use dcmtl_core::TaskId;

/// A small model of the given topology: 3 layers, hidden 2, embeddings 4.
pub fn tiny_model(
    topology: Topology,
    cascade: CascadeTopology,
    labels: usize,
    seed: u64,
) -> TaggingModel {
    let config = ModelConfig {
        topology,
        cascade_topology: cascade,
        hidden: 2,
        emb_dim: 4,
        seed,
        ..ModelConfig::default()
    };
    let counts = TaskId::ALL.iter().map(|&t| (t, labels)).collect();
    TaggingModel::new(config, 6, &counts).unwrap()
}

/// Every topology variant with a readable name.
pub fn all_variants() -> Vec<(String, Topology, CascadeTopology)> {
    let mut v = vec![
        (
            "basic".to_string(),
            Topology::Basic,
            CascadeTopology::default(),
        ),
        (
            "vanilla".to_string(),
            Topology::Vanilla,
            CascadeTopology::default(),
        ),
        (
            "hierarchy".to_string(),
            Topology::Hierarchy,
            CascadeTopology::default(),
        ),
    ];
    for c in CascadeTopology::ALL {
        v.push((format!("dcmtl {c}"), Topology::Dcmtl, c));
    }
    v
}

/// Worst finite-difference error of the training loss(es) of `model` on
/// `tokens` with gold `labels`. Topologies that sample a task per step are
/// checked on every task loss.
pub fn model_gradient_error(
    model: &mut TaggingModel,
    tokens: &TokenBatch,
    labels: &BatchLabels,
) -> f64 {
    let tasks = match model.config().topology {
        Topology::Hierarchy | Topology::Dcmtl => model.tasks(),
        _ => vec![TaskId::Slot],
    };
    let mut worst: f64 = 0.0;
    for task in tasks {
        let err = max_gradient_error(
            model,
            |m| m.params_mut(),
            |m| {
                let mut g = Graph::new(m.params());
                let l = m.step_loss(&mut g, tokens, labels, task)?;
                Ok(g.value(l).item())
            },
            |m| {
                let mut g = Graph::new(m.params());
                let l = m.step_loss(&mut g, tokens, labels, task)?;
                g.backward(l)
            },
        );
        worst = worst.max(err);
    }
    worst
}

/// One 2-token sequence with two labels per task.
pub fn two_token_instance() -> (TokenBatch, BatchLabels) {
    let tokens = TokenBatch::new(&[&[2, 3]]);
    let labels: BTreeMap<TaskId, Vec<Vec<usize>>> =
        TaskId::ALL.iter().map(|&t| (t, vec![vec![1, 0]])).collect();
    (tokens, labels)
}

/// Two sequences of lengths 3 and 2, so the second is padded.
pub fn padded_instance() -> (TokenBatch, BatchLabels) {
    let tokens = TokenBatch::new(&[&[2, 3, 4], &[5, 1]]);
    let labels = TaskId::ALL
        .iter()
        .map(|&t| (t, vec![vec![1, 0, 1], vec![0, 1]]))
        .collect();
    (tokens, labels)
}

/// Copies every parameter of `from` whose name also exists in `to`.
pub fn copy_shared(from: &TaggingModel, to: &mut TaggingModel) {
    for (_, name, t) in from.params().iter() {
        if let Some(dst) = to.params_mut().by_name_mut(name) {
            *dst = t.clone();
        }
    }
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}
