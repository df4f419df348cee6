//! Embedding lookup and (stacked) bidirectional LSTM encoders.
//!
//! Sequences are processed in batches laid out time-major: row `t * batch + b`
//! of a [`SeqBatch`] holds position `t` of sequence `b`. Shorter sequences are
//! right-padded; padded rows never influence the rows of real positions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{init, Graph, NodeId, ParamId, ParamStore, Tensor};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// A batch of sequences flowing through the encoder.
#[derive(Clone, Debug)]
pub struct SeqBatch {
    /// `[steps * batch, dim]`, time-major.
    pub node: NodeId,
    pub steps: usize,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    /// Which rows of time step `t` belong to real (unpadded) positions.
    pub fn step_mask(&self, t: usize) -> Vec<bool> {
        self.lengths.iter().map(|&len| t < len).collect()
    }
}

/// Token ids of a padded batch in time-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub steps: usize,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let batch = seqs.len();
        let mut ids = vec![PAD_ID; steps * batch];
        for (b, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t * batch + b] = id;
            }
        }
        Self {
            ids,
            steps,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        vocab_size: usize,
        dim: usize,
    ) -> Result<Self> {
        let table = init::uniform(rng, &[vocab_size, dim], 0.1);
        Ok(Self {
            param: store.register(name, table)?,
            vocab_size,
            dim,
        })
    }

    /// `[ids.len(), dim]` rows of the table. Padding is not masked here.
    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<NodeId> {
        let table = g.param(self.param);
        g.gather(table, ids)
    }

    pub fn embed_batch(&self, g: &mut Graph, tokens: &TokenBatch) -> Result<SeqBatch> {
        Ok(SeqBatch {
            node: self.embed(g, &tokens.ids)?,
            steps: tokens.steps,
            lengths: tokens.lengths.clone(),
        })
    }
}

/// Gate blocks are laid out (input, forget, cell candidate, output) along the
/// `4 * hidden` axis.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let w_input = store.register(
            format!("{prefix}.w_input"),
            init::xavier_uniform(rng, input_dim, 4 * hidden),
        )?;
        let w_hidden = store.register(
            format!("{prefix}.w_hidden"),
            init::xavier_uniform(rng, hidden, 4 * hidden),
        )?;
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.register(format!("{prefix}.bias"), bias)?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    /// Splits pre-activations `[rows, 4h]` into gates and advances the cell.
    fn cell(&self, g: &mut Graph, gates: NodeId, c_prev: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.hidden;
        let i = g.slice(gates, 0, h)?;
        let f = g.slice(gates, h, 2 * h)?;
        let cand = g.slice(gates, 2 * h, 3 * h)?;
        let o = g.slice(gates, 3 * h, 4 * h)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// One LSTM step. `x` is `[in_dim]` or `[rows, in_dim]`; states match.
    pub fn step(
        &self,
        g: &mut Graph,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let xi = g.matmul(x, wx)?;
        let hh = g.matmul(h_prev, wh)?;
        let pre = g.add(xi, hh)?;
        let pre = g.add_bias(pre, b)?;
        self.cell(g, pre, c_prev)
    }

    /// Runs over a padded batch, forwards or backwards in time, starting from
    /// zero states. Returns `[steps * batch, hidden]` time-major outputs.
    fn run(&self, g: &mut Graph, xs: &SeqBatch, reverse: bool) -> Result<NodeId> {
        let batch = xs.batch();
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let proj = g.matmul(xs.node, wx)?;
        let proj = g.add_bias(proj, b)?;

        let zeros = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let (mut h, mut c) = (zeros, zeros);
        let mut outputs = vec![zeros; xs.steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..xs.steps).rev())
        } else {
            Box::new(0..xs.steps)
        };
        for t in order {
            let xt = g.slice_rows(proj, t * batch, (t + 1) * batch)?;
            let hh = g.matmul(h, wh)?;
            let pre = g.add(xt, hh)?;
            let (h_new, c_new) = self.cell(g, pre, c)?;
            let mask = xs.step_mask(t);
            if mask.iter().all(|&m| m) {
                h = h_new;
                c = c_new;
            } else {
                // Padded rows keep their previous (initially zero) state, so a
                // backward pass starts fresh at each sequence's true end.
                h = g.select_rows(&mask, h_new, h)?;
                c = g.select_rows(&mask, c_new, c)?;
            }
            outputs[t] = h;
        }
        g.concat_rows(&outputs)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmLayer {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmLayer {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmParams::register(store, rng, &format!("{prefix}.fwd"), input_dim, hidden)?,
            backward: LstmParams::register(
                store,
                rng,
                &format!("{prefix}.bwd"),
                input_dim,
                hidden,
            )?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    /// Position `i` of the output is `[forward state over x_0..=x_i ;
    /// backward state over x_{len-1}..=x_i]`.
    pub fn apply(&self, g: &mut Graph, xs: &SeqBatch) -> Result<SeqBatch> {
        if xs.steps == 0 || xs.lengths.contains(&0) {
            return Err(Error::EmptySequence("bilstm"));
        }
        let dim = g.value(xs.node).cols();
        if dim != self.input_dim() {
            return Err(Error::shape(
                "bilstm",
                format!("layer expects input dim {}, got {dim}", self.input_dim()),
            ));
        }
        let fwd = self.forward.run(g, xs, false)?;
        let bwd = self.backward.run(g, xs, true)?;
        Ok(SeqBatch {
            node: g.concat(&[fwd, bwd])?,
            steps: xs.steps,
            lengths: xs.lengths.clone(),
        })
    }
}

/// Stacked BiLSTM layers; layer `l + 1` consumes the output of layer `l`.
#[derive(Clone, Debug)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstmLayer>,
}

impl BiLstmStack {
    pub fn new(layers: Vec<BiLstmLayer>) -> Result<Self> {
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::shape(
                    "stack",
                    format!(
                        "layer {} outputs {} but layer {} expects {}",
                        l + 1,
                        pair[0].output_dim(),
                        l + 2,
                        pair[1].input_dim()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Every layer's output, bottom to top.
    pub fn apply(&self, g: &mut Graph, xs: &SeqBatch) -> Result<Vec<SeqBatch>> {
        let mut taps: Vec<SeqBatch> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = taps.last().unwrap_or(xs);
            let out = layer.apply(g, input)?;
            taps.push(out);
        }
        Ok(taps)
    }
}
