//! Linear-chain CRF: path scores, the log-partition function, negative
//! log-likelihood, marginals and Viterbi decoding.
//!
//! All scores live in the log domain. The score of a label path `y` over
//! emissions `e` is
//!
//! ```text
//! start[y_0] + Σ_i e[i, y_i] + Σ_{i≥1} A[y_{i-1}, y_i] + stop[y_last]
//! ```
//!
//! where `A[from, to]` is the transition matrix.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::SeqBatch;
use crate::numeric::{init, CustomOp, Graph, NodeId, ParamId, ParamStore, Real, Tensor};

fn lse(xs: impl Iterator<Item = Real> + Clone) -> Real {
    let max = xs.clone().fold(Real::NEG_INFINITY, Real::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<Real>().ln()
}

/// Borrowed view of the structural CRF scores.
#[derive(Clone, Copy, Debug)]
pub struct CrfWeights<'a> {
    /// `[labels, labels]`, row = previous label.
    pub transitions: &'a [Real],
    pub start: &'a [Real],
    pub stop: &'a [Real],
    pub labels: usize,
}

impl<'a> CrfWeights<'a> {
    pub fn new(transitions: &'a [Real], start: &'a [Real], stop: &'a [Real]) -> Result<Self> {
        let labels = start.len();
        if labels == 0 || stop.len() != labels || transitions.len() != labels * labels {
            return Err(Error::shape(
                "crf",
                format!(
                    "start {}, stop {}, transitions {} values",
                    start.len(),
                    stop.len(),
                    transitions.len()
                ),
            ));
        }
        Ok(Self {
            transitions,
            start,
            stop,
            labels,
        })
    }

    #[inline]
    fn trans(&self, from: usize, to: usize) -> Real {
        self.transitions[from * self.labels + to]
    }
}

/// Per-position label scores with a mask of real positions.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionSequence {
    /// `[T, labels]`.
    pub scores: Tensor,
    pub mask: Vec<bool>,
}

impl EmissionSequence {
    pub fn new(scores: Tensor, mask: Vec<bool>) -> Result<Self> {
        if scores.rank() != 2 || scores.rows() != mask.len() {
            return Err(Error::shape(
                "emissions",
                format!("scores {:?} with mask of {}", scores.shape(), mask.len()),
            ));
        }
        Ok(Self { scores, mask })
    }

    /// Every position is real.
    pub fn unmasked(scores: Tensor) -> Result<Self> {
        let mask = vec![true; scores.rows()];
        Self::new(scores, mask)
    }

    pub fn labels(&self) -> usize {
        self.scores.cols()
    }

    /// Rows of unmasked positions, in order.
    fn active(&self) -> Vec<&[Real]> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(t, _)| self.scores.row(t))
            .collect()
    }

    fn check(&self, w: &CrfWeights) -> Result<()> {
        if self.labels() != w.labels {
            return Err(Error::shape(
                "crf",
                format!("{} emission columns for {} labels", self.labels(), w.labels),
            ));
        }
        Ok(())
    }
}

/// Labels at unmasked positions; `y` must cover every position.
fn active_labels(e: &EmissionSequence, y: &[usize], labels: usize) -> Result<Vec<usize>> {
    if y.len() != e.mask.len() {
        return Err(Error::shape(
            "crf",
            format!("{} labels for {} positions", y.len(), e.mask.len()),
        ));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= labels) {
        return Err(Error::OutOfRange {
            what: "label set",
            index: bad,
            size: labels,
        });
    }
    Ok(y.iter()
        .zip(&e.mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .collect())
}

fn path_score(rows: &[&[Real]], y: &[usize], w: &CrfWeights) -> Real {
    // Same accumulation order as the Viterbi recursion, so the best path's
    // score agrees bitwise with the decoder's.
    let mut s = w.start[y[0]] + rows[0][y[0]];
    for t in 1..rows.len() {
        s = s + w.trans(y[t - 1], y[t]) + rows[t][y[t]];
    }
    s + w.stop[y[y.len() - 1]]
}

/// Unnormalized log score of one label path. Masked positions are skipped.
pub fn sequence_score(e: &EmissionSequence, y: &[usize], w: &CrfWeights) -> Result<Real> {
    e.check(w)?;
    let y = active_labels(e, y, w.labels)?;
    let rows = e.active();
    if rows.is_empty() {
        return Err(Error::EmptySequence("sequence_score"));
    }
    Ok(path_score(&rows, &y, w))
}

/// Forward variables `alpha[t][y]`: log-sum of all prefixes ending in `y`.
fn forward(rows: &[&[Real]], w: &CrfWeights) -> Vec<Vec<Real>> {
    let l = w.labels;
    let mut alpha = Vec::with_capacity(rows.len());
    alpha.push((0..l).map(|y| w.start[y] + rows[0][y]).collect::<Vec<_>>());
    for row in &rows[1..] {
        let prev = alpha.last().unwrap();
        let next = (0..l)
            .map(|y| row[y] + lse((0..l).map(|p| prev[p] + w.trans(p, y))))
            .collect();
        alpha.push(next);
    }
    alpha
}

fn backward(rows: &[&[Real]], w: &CrfWeights) -> Vec<Vec<Real>> {
    let l = w.labels;
    let t_len = rows.len();
    let mut beta = vec![Vec::new(); t_len];
    beta[t_len - 1] = w.stop.to_vec();
    for t in (0..t_len - 1).rev() {
        let next = &beta[t + 1];
        beta[t] = (0..l)
            .map(|p| lse((0..l).map(|y| w.trans(p, y) + rows[t + 1][y] + next[y])))
            .collect();
    }
    beta
}

/// `log Σ_y exp(score(y))` over all label paths, by the forward algorithm.
pub fn log_partition(e: &EmissionSequence, w: &CrfWeights) -> Result<Real> {
    e.check(w)?;
    let rows = e.active();
    if rows.is_empty() {
        return Err(Error::EmptySequence("log_partition"));
    }
    let alpha = forward(&rows, w);
    let last = alpha.last().unwrap();
    Ok(lse((0..w.labels).map(|y| last[y] + w.stop[y])))
}

/// Negative log-likelihood of the gold path.
pub fn nll(e: &EmissionSequence, y: &[usize], w: &CrfWeights) -> Result<Real> {
    Ok(log_partition(e, w)? - sequence_score(e, y, w)?)
}

/// Posterior marginals over unmasked positions.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub log_z: Real,
    /// `[T_active][labels]`.
    pub unary: Vec<Vec<Real>>,
    /// Expected transition counts, `[labels * labels]`, row = previous label.
    pub pairwise: Vec<Real>,
}

pub fn marginals(e: &EmissionSequence, w: &CrfWeights) -> Result<Marginals> {
    e.check(w)?;
    let rows = e.active();
    if rows.is_empty() {
        return Err(Error::EmptySequence("marginals"));
    }
    Ok(marginals_of(&rows, w))
}

fn marginals_of(rows: &[&[Real]], w: &CrfWeights) -> Marginals {
    let l = w.labels;
    let alpha = forward(rows, w);
    let beta = backward(rows, w);
    let last = alpha.last().unwrap();
    let log_z = lse((0..l).map(|y| last[y] + w.stop[y]));
    let unary = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (0..l).map(|y| (a[y] + b[y] - log_z).exp()).collect())
        .collect();
    let mut pairwise = vec![0.0; l * l];
    for t in 1..rows.len() {
        for p in 0..l {
            for y in 0..l {
                pairwise[p * l + y] +=
                    (alpha[t - 1][p] + w.trans(p, y) + rows[t][y] + beta[t][y] - log_z).exp();
            }
        }
    }
    Marginals {
        log_z,
        unary,
        pairwise,
    }
}

/// Highest-scoring path over unmasked positions and its score. Ties go to
/// the lowest label index at every backtracking step.
pub fn viterbi(e: &EmissionSequence, w: &CrfWeights) -> Result<(Vec<usize>, Real)> {
    e.check(w)?;
    let rows = e.active();
    if rows.is_empty() {
        return Err(Error::EmptySequence("viterbi"));
    }
    Ok(viterbi_of(&rows, w))
}

fn argmax_first(xs: impl Iterator<Item = Real>) -> (usize, Real) {
    let mut best = (0, Real::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if i == 0 || x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn viterbi_of(rows: &[&[Real]], w: &CrfWeights) -> (Vec<usize>, Real) {
    let l = w.labels;
    let mut delta: Vec<Real> = (0..l).map(|y| w.start[y] + rows[0][y]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(rows.len());
    for row in &rows[1..] {
        let mut next = vec![0.0; l];
        let mut ptr = vec![0; l];
        for y in 0..l {
            let (p, s) = argmax_first((0..l).map(|p| delta[p] + w.trans(p, y)));
            next[y] = s + row[y];
            ptr[y] = p;
        }
        back.push(ptr);
        delta = next;
    }
    let (mut y, score) = argmax_first((0..l).map(|y| delta[y] + w.stop[y]));
    let mut path = vec![y];
    for ptr in back.iter().rev() {
        y = ptr[y];
        path.push(y);
    }
    path.reverse();
    (path, score)
}

/// Registered parameters of one CRF head: the emission projection from
/// hidden states plus the structural scores.
#[derive(Clone, Debug)]
pub struct CrfParameters {
    pub w_emit: ParamId,
    pub b_emit: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub input_dim: usize,
    pub labels: usize,
}

impl CrfParameters {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        labels: usize,
    ) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Config(format!(
                "{prefix}: a CRF needs at least one label"
            )));
        }
        Ok(Self {
            w_emit: store.register(
                format!("{prefix}.w_emit"),
                init::xavier_uniform(rng, input_dim, labels),
            )?,
            b_emit: store.register(format!("{prefix}.b_emit"), Tensor::zeros(&[labels]))?,
            transitions: store.register(
                format!("{prefix}.transitions"),
                Tensor::zeros(&[labels, labels]),
            )?,
            start: store.register(format!("{prefix}.start"), Tensor::zeros(&[labels]))?,
            stop: store.register(format!("{prefix}.stop"), Tensor::zeros(&[labels]))?,
            input_dim,
            labels,
        })
    }

    pub fn weights<'a>(&self, store: &'a ParamStore) -> CrfWeights<'a> {
        CrfWeights {
            transitions: store.get(self.transitions).data(),
            start: store.get(self.start).data(),
            stop: store.get(self.stop).data(),
            labels: self.labels,
        }
    }

    /// Emission scores `[steps * batch, labels]` for a batch of hidden states.
    pub fn emissions(&self, g: &mut Graph, hidden: &SeqBatch) -> Result<NodeId> {
        let w = g.param(self.w_emit);
        let b = g.param(self.b_emit);
        let proj = g.matmul(hidden.node, w)?;
        g.add_bias(proj, b)
    }

    /// Mean negative log-likelihood over the sequences of a batch.
    ///
    /// `emissions` is time-major `[steps * batch, labels]`; `gold[b]` holds
    /// the labels of sequence `b` at its real positions.
    pub fn batch_nll(
        &self,
        g: &mut Graph,
        emissions: NodeId,
        lengths: &[usize],
        gold: &[&[usize]],
    ) -> Result<NodeId> {
        let batch = lengths.len();
        if gold.len() != batch {
            return Err(Error::shape(
                "crf_nll",
                format!("{} gold sequences for batch of {batch}", gold.len()),
            ));
        }
        let trans = g.param(self.transitions);
        let start = g.param(self.start);
        let stop = g.param(self.stop);
        let store = g.params();
        let w = self.weights(store);
        let em = g.value(emissions);
        let l = self.labels;
        if em.cols() != l || (batch > 0 && !em.rows().is_multiple_of(batch)) {
            return Err(Error::shape(
                "crf_nll",
                format!("emissions {:?} for batch {batch} of {l} labels", em.shape()),
            ));
        }

        let mut total = 0.0;
        let mut g_em = Tensor::zeros(em.shape());
        let mut g_trans = vec![0.0; l * l];
        let mut g_start = vec![0.0; l];
        let mut g_stop = vec![0.0; l];
        let mut count = 0usize;
        for (b, (&len, y)) in lengths.iter().zip(gold).enumerate() {
            if len == 0 {
                continue;
            }
            if y.len() != len {
                return Err(Error::shape(
                    "crf_nll",
                    format!(
                        "sequence {b} has {len} positions but {} gold labels",
                        y.len()
                    ),
                ));
            }
            if let Some(&bad) = y.iter().find(|&&v| v >= l) {
                return Err(Error::OutOfRange {
                    what: "label set",
                    index: bad,
                    size: l,
                });
            }
            let rows: Vec<&[Real]> = (0..len).map(|t| em.row(t * batch + b)).collect();
            let m = marginals_of(&rows, &w);
            total += m.log_z - path_score(&rows, y, &w);
            count += 1;

            let ge = g_em.data_mut();
            for (t, probs) in m.unary.iter().enumerate() {
                let base = (t * batch + b) * l;
                for (k, &p) in probs.iter().enumerate() {
                    ge[base + k] += p;
                }
                ge[base + y[t]] -= 1.0;
            }
            for (acc, p) in g_trans.iter_mut().zip(&m.pairwise) {
                *acc += p;
            }
            for t in 1..len {
                g_trans[y[t - 1] * l + y[t]] -= 1.0;
            }
            for k in 0..l {
                g_start[k] += m.unary[0][k];
                g_stop[k] += m.unary[len - 1][k];
            }
            g_start[y[0]] -= 1.0;
            g_stop[y[len - 1]] -= 1.0;
        }
        if count == 0 {
            return Err(Error::EmptySequence("crf_nll"));
        }
        let inv = 1.0 / count as Real;
        g_em.scale_in_place(inv);
        let scale = |v: Vec<Real>| v.into_iter().map(|x| x * inv).collect::<Vec<_>>();
        let op = CrfNllOp {
            grads: [
                g_em,
                Tensor::matrix(l, l, scale(g_trans))?,
                Tensor::vector(scale(g_start)),
                Tensor::vector(scale(g_stop)),
            ],
        };
        Ok(g.custom(
            vec![emissions, trans, start, stop],
            Tensor::scalar(total * inv),
            Box::new(op),
        ))
    }

    /// Viterbi paths for every sequence of a batch.
    pub fn decode_batch(
        &self,
        store: &ParamStore,
        emissions: &Tensor,
        lengths: &[usize],
    ) -> Vec<Vec<usize>> {
        let w = self.weights(store);
        let batch = lengths.len();
        lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| {
                if len == 0 {
                    return Vec::new();
                }
                let rows: Vec<&[Real]> = (0..len).map(|t| emissions.row(t * batch + b)).collect();
                viterbi_of(&rows, &w).0
            })
            .collect()
    }
}

/// Gradient of the mean batch NLL, precomputed from the marginals during
/// the forward pass.
struct CrfNllOp {
    grads: [Tensor; 4],
}

impl CustomOp for CrfNllOp {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(
        &self,
        upstream: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
    ) -> Vec<Option<Tensor>> {
        let u = upstream.item();
        self.grads.iter().map(|t| Some(t.map(|v| v * u))).collect()
    }
}
