use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm, softmax_row, softmax_row_backward, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Named tensors bound to the free inputs of a graph.
pub type Bindings = BTreeMap<String, Tensor>;

/// Layout of a multi-head attention block. Queries are stored as
/// `[batch * q_len, heads * head_dim]` and keys/values as
/// `[batch * k_len, heads * head_dim]`; score matrices as
/// `[batch * heads * q_len, k_len]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnGeom {
    pub batch: usize,
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
}

impl AttnGeom {
    fn score_rows(&self) -> usize {
        self.batch * self.heads * self.q_len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnMask {
    pub geom: AttnGeom,
    /// `true` marks a padded key, laid out as `[batch, k_len]`.
    pub key_pad: Option<Vec<bool>>,
    pub causal: bool,
}

impl AttnMask {
    fn masked(&self, b: usize, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return true;
        }
        match &self.key_pad {
            Some(pad) => pad[b * self.geom.k_len + j],
            None => false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Constant(Tensor),
    /// `[m, k] · [k, n]`
    MatMul(NodeId, NodeId),
    /// `[m, k] · [n, k]ᵀ`
    MatMulBt(NodeId, NodeId),
    /// Adds a `[n]` bias to every row of `[.., n]`.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    Embedding {
        table: NodeId,
        ids: Vec<u32>,
    },
    /// Inverted dropout; the mask is a pure function of `seed`, so repeated
    /// forward passes see the same mask.
    Dropout {
        x: NodeId,
        rate: f64,
        seed: u64,
        train: bool,
    },
    AttnScores {
        q: NodeId,
        k: NodeId,
        geom: AttnGeom,
    },
    MaskedSoftmax {
        x: NodeId,
        mask: AttnMask,
    },
    AttnContext {
        weights: NodeId,
        v: NodeId,
        geom: AttnGeom,
    },
    /// Label-smoothed cross-entropy averaged over non-pad targets.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        smoothing: f64,
        pad: u32,
    },
    Sum(NodeId),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Dropout { .. } => "dropout",
            Op::AttnScores { .. } => "attn_scores",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::AttnContext { .. } => "attn_context",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Reshape(..) => "reshape",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _) | Op::Relu(x) | Op::Softmax(x) | Op::Sum(x) | Op::Reshape(x, _) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::Dropout { x, .. } => vec![*x],
            Op::AttnScores { q, k, .. } => vec![*q, *k],
            Op::MaskedSoftmax { x, .. } => vec![*x],
            Op::AttnContext { weights, v, .. } => vec![*weights, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
enum Saved {
    None,
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Probs(Vec<f64>),
    Mask(Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

/// Expression graph in topological order. Nodes are appended by the
/// builder methods, evaluated by [`Graph::forward`] and differentiated by
/// [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    saved: Vec<Saved>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    /// Id of the node whose value `forward` returns.
    pub fn output(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1)
    }

    fn push(&mut self, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Input(_) => true,
            Op::Constant(_) => false,
            other => other.inputs().iter().any(|&i| self.nodes[i].requires_grad),
        };
        for i in op.inputs() {
            assert!(i < self.nodes.len(), "node input {i} does not precede its consumer");
        }
        self.nodes.push(Node { op, requires_grad });
        self.values.push(None);
        self.saved.push(Saved::None);
        self.evaluated = false;
        self.nodes.len() - 1
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant(t))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulBt(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        self.push(Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn embedding(&mut self, table: NodeId, ids: Vec<u32>) -> NodeId {
        self.push(Op::Embedding { table, ids })
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64, train: bool) -> NodeId {
        self.push(Op::Dropout { x, rate, seed, train })
    }

    pub fn attn_scores(&mut self, q: NodeId, k: NodeId, geom: AttnGeom) -> NodeId {
        self.push(Op::AttnScores { q, k, geom })
    }

    pub fn masked_softmax(&mut self, x: NodeId, mask: AttnMask) -> NodeId {
        self.push(Op::MaskedSoftmax { x, mask })
    }

    pub fn attn_context(&mut self, weights: NodeId, v: NodeId, geom: AttnGeom) -> NodeId {
        self.push(Op::AttnContext { weights, v, geom })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<u32>, smoothing: f64, pad: u32) -> NodeId {
        self.push(Op::CrossEntropy {
            logits,
            targets,
            smoothing,
            pad,
        })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        self.push(Op::Reshape(x, shape))
    }

    fn fetch<'a>(&'a self, bindings: &'a Bindings, id: NodeId) -> Result<&'a Tensor> {
        match &self.nodes[id].op {
            Op::Input(name) => bindings.get(name).ok_or_else(|| Error::Unbound {
                node: id,
                name: name.clone(),
            }),
            Op::Constant(t) => Ok(t),
            _ => self.values[id].as_ref().ok_or(Error::BackwardBeforeForward),
        }
    }

    /// Value of any evaluated node.
    pub fn value<'a>(&'a self, bindings: &'a Bindings, id: NodeId) -> Result<&'a Tensor> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        self.fetch(bindings, id)
    }

    /// Evaluates every node and returns the value of the last one.
    pub fn forward(&mut self, bindings: &Bindings) -> Result<Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::Tensor("empty graph".into()));
        }
        self.evaluated = false;
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Input(_) | Op::Constant(_)) {
                // Validates that the name is bound.
                self.fetch(bindings, id)?;
                continue;
            }
            let (value, saved) = self.eval_node(bindings, id)?;
            self.values[id] = Some(value);
            self.saved[id] = saved;
        }
        self.evaluated = true;
        let last = self.nodes.len() - 1;
        Ok(self.fetch(bindings, last)?.clone())
    }

    fn eval_node(&self, bindings: &Bindings, id: NodeId) -> Result<(Tensor, Saved)> {
        let get = |i: NodeId| self.fetch(bindings, i);
        let out = match &self.nodes[id].op {
            Op::Input(_) | Op::Constant(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (a, b) = (get(*a)?, get(*b)?);
                let (m, k) = as_matrix(id, a)?;
                let (k2, n) = as_matrix(id, b)?;
                if k != k2 {
                    return Err(Error::shape(id, format!("matmul {:?} x {:?}", a.shape(), b.shape())));
                }
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, a.data(), View::rows(0, k), b.data(), View::rows(0, n), 0.0, &mut c, View::rows(0, n));
                (Tensor::from_parts(vec![m, n], c), Saved::None)
            }
            Op::MatMulBt(a, b) => {
                let (a, b) = (get(*a)?, get(*b)?);
                let (m, k) = as_matrix(id, a)?;
                let (n, k2) = as_matrix(id, b)?;
                if k != k2 {
                    return Err(Error::shape(id, format!("matmul_bt {:?} x {:?}ᵀ", a.shape(), b.shape())));
                }
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, a.data(), View::rows(0, k), b.data(), View::transposed(0, k), 0.0, &mut c, View::rows(0, n));
                (Tensor::from_parts(vec![m, n], c), Saved::None)
            }
            Op::AddBias(x, b) => {
                let (x, b) = (get(*x)?, get(*b)?);
                let n = x.last_dim();
                if b.shape() != [n] {
                    return Err(Error::shape(id, format!("bias {:?} for input {:?}", b.shape(), x.shape())));
                }
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(n) {
                    row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
                }
                (Tensor::from_parts(x.shape().to_vec(), data), Saved::None)
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (get(*a)?, get(*b)?);
                if ta.shape() != tb.shape() {
                    return Err(Error::shape(id, format!("elementwise {:?} vs {:?}", ta.shape(), tb.shape())));
                }
                let add = matches!(self.nodes[id].op, Op::Add(..));
                let data = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| if add { x + y } else { x * y })
                    .collect();
                (Tensor::from_parts(ta.shape().to_vec(), data), Saved::None)
            }
            Op::Scale(x, f) => {
                let x = get(*x)?;
                let data = x.data().iter().map(|v| v * f).collect();
                (Tensor::from_parts(x.shape().to_vec(), data), Saved::None)
            }
            Op::Relu(x) => {
                let x = get(*x)?;
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                (Tensor::from_parts(x.shape().to_vec(), data), Saved::None)
            }
            Op::Softmax(x) => {
                let x = get(*x)?;
                let n = x.last_dim();
                let mut data = vec![0.0; x.len()];
                for (src, dst) in x.data().chunks(n).zip(data.chunks_mut(n)) {
                    softmax_row(src, dst);
                }
                (Tensor::from_parts(x.shape().to_vec(), data), Saved::None)
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, g, b) = (get(*x)?, get(*gain)?, get(*bias)?);
                let n = x.last_dim();
                if g.shape() != [n] || b.shape() != [n] {
                    return Err(Error::shape(id, format!("layer_norm params {:?}/{:?} for {:?}", g.shape(), b.shape(), x.shape())));
                }
                let rows = x.rows();
                let mut xhat = vec![0.0; x.len()];
                let mut inv_std = vec![0.0; rows];
                let mut out = vec![0.0; x.len()];
                for r in 0..rows {
                    let row = &x.data()[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[r] = is;
                    for j in 0..n {
                        let h = (row[j] - mean) * is;
                        xhat[r * n + j] = h;
                        out[r * n + j] = h * g.data()[j] + b.data()[j];
                    }
                }
                (Tensor::from_parts(x.shape().to_vec(), out), Saved::LayerNorm { xhat, inv_std })
            }
            Op::Embedding { table, ids } => {
                let t = get(*table)?;
                let (vocab, d) = as_matrix(id, t)?;
                if ids.is_empty() {
                    return Err(Error::shape(id, "embedding lookup of zero ids"));
                }
                let mut out = Vec::with_capacity(ids.len() * d);
                for &i in ids {
                    if i as usize >= vocab {
                        return Err(Error::TokenOutOfRange { id: i, size: vocab });
                    }
                    out.extend_from_slice(&t.data()[i as usize * d..(i as usize + 1) * d]);
                }
                (Tensor::from_parts(vec![ids.len(), d], out), Saved::None)
            }
            Op::Dropout { x, rate, seed, train } => {
                let x = get(*x)?;
                if !train || *rate == 0.0 {
                    (x.clone(), Saved::None)
                } else {
                    let keep = 1.0 - rate;
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (Tensor::from_parts(x.shape().to_vec(), data), Saved::Mask(mask))
                }
            }
            Op::AttnScores { q, k, geom } => {
                let (q, k) = (get(*q)?, get(*k)?);
                let (qr, d) = as_matrix(id, q)?;
                let (kr, d2) = as_matrix(id, k)?;
                check_attn(id, geom, qr, kr, d, d2)?;
                let dh = d / geom.heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (tq, tk) = (geom.q_len, geom.k_len);
                let mut out = vec![0.0; geom.score_rows() * tk];
                for b in 0..geom.batch {
                    for h in 0..geom.heads {
                        gemm(
                            tq,
                            dh,
                            tk,
                            q.data(),
                            View::rows(b * tq * d + h * dh, d),
                            k.data(),
                            View::transposed(b * tk * d + h * dh, d),
                            0.0,
                            &mut out,
                            View::rows((b * geom.heads + h) * tq * tk, tk),
                        );
                    }
                }
                out.iter_mut().for_each(|v| *v *= scale);
                (Tensor::from_parts(vec![geom.score_rows(), tk], out), Saved::None)
            }
            Op::MaskedSoftmax { x, mask } => {
                let x = get(*x)?;
                let g = mask.geom;
                if x.shape() != [g.score_rows(), g.k_len] {
                    return Err(Error::shape(id, format!("masked_softmax input {:?} for {:?}", x.shape(), g)));
                }
                if let Some(pad) = &mask.key_pad {
                    if pad.len() != g.batch * g.k_len {
                        return Err(Error::shape(id, "key padding mask has wrong length"));
                    }
                }
                let tk = g.k_len;
                let mut out = vec![0.0; x.len()];
                let mut buf = vec![0.0; tk];
                for r in 0..g.score_rows() {
                    let b = r / (g.heads * g.q_len);
                    let i = r % g.q_len;
                    for (j, slot) in buf.iter_mut().enumerate() {
                        *slot = if mask.masked(b, i, j) { f64::NEG_INFINITY } else { x.data()[r * tk + j] };
                    }
                    softmax_row(&buf, &mut out[r * tk..(r + 1) * tk]);
                }
                (Tensor::from_parts(x.shape().to_vec(), out), Saved::None)
            }
            Op::AttnContext { weights, v, geom } => {
                let (w, v) = (get(*weights)?, get(*v)?);
                let (vr, d) = as_matrix(id, v)?;
                if w.shape() != [geom.score_rows(), geom.k_len] || vr != geom.batch * geom.k_len || d % geom.heads != 0 {
                    return Err(Error::shape(id, format!("attn_context weights {:?} values {:?} for {:?}", w.shape(), v.shape(), geom)));
                }
                let dh = d / geom.heads;
                let (tq, tk) = (geom.q_len, geom.k_len);
                let mut out = vec![0.0; geom.batch * tq * d];
                for b in 0..geom.batch {
                    for h in 0..geom.heads {
                        gemm(
                            tq,
                            tk,
                            dh,
                            w.data(),
                            View::rows((b * geom.heads + h) * tq * tk, tk),
                            v.data(),
                            View::rows(b * tk * d + h * dh, d),
                            0.0,
                            &mut out,
                            View::rows(b * tq * d + h * dh, d),
                        );
                    }
                }
                (Tensor::from_parts(vec![geom.batch * tq, d], out), Saved::None)
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                pad,
            } => {
                let l = get(*logits)?;
                let v = l.last_dim();
                if l.rows() != targets.len() {
                    return Err(Error::shape(id, format!("{} targets for logits {:?}", targets.len(), l.shape())));
                }
                let mut probs = vec![0.0; l.len()];
                let mut total = 0.0;
                let mut count = 0usize;
                let mut logp = vec![0.0; v];
                for (r, &t) in targets.iter().enumerate() {
                    if t == *pad {
                        continue;
                    }
                    if t as usize >= v {
                        return Err(Error::TokenOutOfRange { id: t, size: v });
                    }
                    let row = &l.data()[r * v..(r + 1) * v];
                    super::kernels::log_softmax_row(row, &mut logp);
                    let uniform: f64 = logp.iter().sum::<f64>() / v as f64;
                    total += -(1.0 - smoothing) * logp[t as usize] - smoothing * uniform;
                    for (p, lp) in probs[r * v..(r + 1) * v].iter_mut().zip(&logp) {
                        *p = lp.exp();
                    }
                    count += 1;
                }
                if count == 0 {
                    return Err(Error::AllPadding);
                }
                (Tensor::scalar(total / count as f64), Saved::Probs(probs))
            }
            Op::Sum(x) => {
                let x = get(*x)?;
                (Tensor::scalar(x.data().iter().sum()), Saved::None)
            }
            Op::Reshape(x, shape) => {
                let x = get(*x)?;
                let t = x.clone().reshape(shape.clone()).map_err(|e| Error::shape(id, e.to_string()))?;
                (t, Saved::None)
            }
        };
        Ok(out)
    }

    /// Back-propagates `seed` from the last node, adds the resulting
    /// gradients into the accumulators of the bound tensors, and returns
    /// the accumulated gradient of every bound input the graph reads.
    pub fn backward(&self, bindings: &mut Bindings, seed: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        self.backward_into(bindings, seed)?;
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            if let Op::Input(name) = &node.op {
                if let Some(t) = bindings.get(name) {
                    out.insert(name.clone(), t.grad_tensor());
                }
            }
        }
        Ok(out)
    }

    /// Like [`Graph::backward`] without materializing the returned map.
    pub fn backward_into(&self, bindings: &mut Bindings, seed: &Tensor) -> Result<()> {
        let grads = self.node_grads(bindings, seed)?;
        for (id, g) in grads.into_iter().enumerate() {
            if let (Op::Input(name), Some(g)) = (&self.nodes[id].op, g) {
                let t = bindings.get_mut(name).ok_or_else(|| Error::Unbound {
                    node: id,
                    name: name.clone(),
                })?;
                let acc = t.grad_or_zeros();
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    fn node_grads(&self, bindings: &Bindings, seed: &Tensor) -> Result<Vec<Option<Vec<f64>>>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let last = self.nodes.len() - 1;
        let out_shape = self.fetch(bindings, last)?.shape().to_vec();
        if seed.shape() != out_shape.as_slice() {
            return Err(Error::shape(last, format!("seed gradient {:?} for output {:?}", seed.shape(), out_shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[last] = Some(seed.data().to_vec());
        for id in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Input(_)) {
                grads[id] = Some(dy);
                continue;
            }
            self.backprop_node(bindings, id, &dy, &mut grads)?;
        }
        Ok(grads)
    }

    fn backprop_node(&self, bindings: &Bindings, id: NodeId, dy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let get = |i: NodeId| self.fetch(bindings, i);
        let wants = |i: NodeId| self.nodes[i].requires_grad;
        // Returns the accumulator for node `i`, zero-filled on first use.
        fn slot(grads: &mut [Option<Vec<f64>>], i: NodeId, n: usize) -> &mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; n])
        }
        match &self.nodes[id].op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (get(*a)?, get(*b)?);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if wants(*a) {
                    let da = slot(grads, *a, m * k);
                    gemm(m, n, k, dy, View::rows(0, n), tb.data(), View::transposed(0, n), 1.0, da, View::rows(0, k));
                }
                if wants(*b) {
                    let db = slot(grads, *b, k * n);
                    gemm(k, m, n, ta.data(), View::transposed(0, k), dy, View::rows(0, n), 1.0, db, View::rows(0, n));
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (get(*a)?, get(*b)?);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                if wants(*a) {
                    let da = slot(grads, *a, m * k);
                    gemm(m, n, k, dy, View::rows(0, n), tb.data(), View::rows(0, k), 1.0, da, View::rows(0, k));
                }
                if wants(*b) {
                    let db = slot(grads, *b, n * k);
                    gemm(n, m, k, dy, View::transposed(0, n), ta.data(), View::rows(0, k), 1.0, db, View::rows(0, k));
                }
            }
            Op::AddBias(x, b) => {
                let tx = get(*x)?;
                let n = tx.last_dim();
                if wants(*x) {
                    let dx = slot(grads, *x, dy.len());
                    dx.iter_mut().zip(dy).for_each(|(a, g)| *a += g);
                }
                if wants(*b) {
                    let db = slot(grads, *b, n);
                    for row in dy.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                }
            }
            Op::Add(a, b) => {
                for &i in &[*a, *b] {
                    if wants(i) {
                        let d = slot(grads, i, dy.len());
                        d.iter_mut().zip(dy).for_each(|(x, g)| *x += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (get(*a)?, get(*b)?);
                if wants(*a) {
                    let d = slot(grads, *a, dy.len());
                    for ((x, g), o) in d.iter_mut().zip(dy).zip(tb.data()) {
                        *x += g * o;
                    }
                }
                if wants(*b) {
                    let d = slot(grads, *b, dy.len());
                    for ((x, g), o) in d.iter_mut().zip(dy).zip(ta.data()) {
                        *x += g * o;
                    }
                }
            }
            Op::Scale(x, f) => {
                let d = slot(grads, *x, dy.len());
                d.iter_mut().zip(dy).for_each(|(a, g)| *a += g * f);
            }
            Op::Relu(x) => {
                let tx = get(*x)?;
                let d = slot(grads, *x, dy.len());
                for ((a, g), v) in d.iter_mut().zip(dy).zip(tx.data()) {
                    if *v > 0.0 {
                        *a += g;
                    }
                }
            }
            Op::Softmax(x) | Op::MaskedSoftmax { x, .. } => {
                let y = self.values[id].as_ref().expect("evaluated");
                let n = y.last_dim();
                let d = slot(grads, *x, dy.len());
                for ((yr, gr), dr) in y.data().chunks(n).zip(dy.chunks(n)).zip(d.chunks_mut(n)) {
                    softmax_row_backward(yr, gr, dr);
                }
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                let Saved::LayerNorm { xhat, inv_std } = &self.saved[id] else {
                    unreachable!("layer norm saves statistics")
                };
                let tg = get(*gain)?;
                let n = tg.len();
                if wants(*gain) {
                    let dg = slot(grads, *gain, n);
                    for (row_g, row_h) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += row_g[j] * row_h[j];
                        }
                    }
                }
                if wants(*bias) {
                    let db = slot(grads, *bias, n);
                    for row in dy.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                }
                if wants(*x) {
                    let dx = slot(grads, *x, dy.len());
                    let mut dh = vec![0.0; n];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &dy[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dh[j] = gr[j] * tg.data()[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dx[r * n + j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let t = get(*table)?;
                let d = t.last_dim();
                let dt = slot(grads, *table, t.len());
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut dt[i as usize * d..(i as usize + 1) * d];
                    dst.iter_mut().zip(&dy[r * d..(r + 1) * d]).for_each(|(a, g)| *a += g);
                }
            }
            Op::Dropout { x, .. } => {
                let d = slot(grads, *x, dy.len());
                match &self.saved[id] {
                    Saved::Mask(mask) => {
                        for ((a, g), m) in d.iter_mut().zip(dy).zip(mask) {
                            *a += g * m;
                        }
                    }
                    _ => d.iter_mut().zip(dy).for_each(|(a, g)| *a += g),
                }
            }
            Op::AttnScores { q, k, geom } => {
                let (tq_t, tk_t) = (get(*q)?, get(*k)?);
                let d = tq_t.last_dim();
                let dh = d / geom.heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (tq, tk) = (geom.q_len, geom.k_len);
                let ds: Vec<f64> = dy.iter().map(|g| g * scale).collect();
                for b in 0..geom.batch {
                    for h in 0..geom.heads {
                        let s_off = (b * geom.heads + h) * tq * tk;
                        if wants(*q) {
                            let dq = slot(grads, *q, tq_t.len());
                            gemm(tq, tk, dh, &ds, View::rows(s_off, tk), tk_t.data(), View::rows(b * tk * d + h * dh, d), 1.0, dq, View::rows(b * tq * d + h * dh, d));
                        }
                        if wants(*k) {
                            let dk = slot(grads, *k, tk_t.len());
                            gemm(tk, tq, dh, &ds, View::transposed(s_off, tk), tq_t.data(), View::rows(b * tq * d + h * dh, d), 1.0, dk, View::rows(b * tk * d + h * dh, d));
                        }
                    }
                }
            }
            Op::AttnContext { weights, v, geom } => {
                let (tw, tv) = (get(*weights)?, get(*v)?);
                let d = tv.last_dim();
                let dh = d / geom.heads;
                let (tq, tk) = (geom.q_len, geom.k_len);
                for b in 0..geom.batch {
                    for h in 0..geom.heads {
                        let w_off = (b * geom.heads + h) * tq * tk;
                        let o_off = b * tq * d + h * dh;
                        if wants(*weights) {
                            let dw = slot(grads, *weights, tw.len());
                            gemm(tq, dh, tk, dy, View::rows(o_off, d), tv.data(), View::transposed(b * tk * d + h * dh, d), 1.0, dw, View::rows(w_off, tk));
                        }
                        if wants(*v) {
                            let dv = slot(grads, *v, tv.len());
                            gemm(tk, tq, dh, tw.data(), View::transposed(w_off, tk), dy, View::rows(o_off, d), 1.0, dv, View::rows(b * tk * d + h * dh, d));
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                pad,
            } => {
                let Saved::Probs(probs) = &self.saved[id] else {
                    unreachable!("cross entropy saves probabilities")
                };
                let v = get(*logits)?.last_dim();
                let count = targets.iter().filter(|&&t| t != *pad).count() as f64;
                let g = dy[0] / count;
                let off = smoothing / v as f64;
                let dl = slot(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    if t == *pad {
                        continue;
                    }
                    let row = &mut dl[r * v..(r + 1) * v];
                    for (j, a) in row.iter_mut().enumerate() {
                        let target = if j == t as usize { 1.0 - smoothing + off } else { off };
                        *a += g * (probs[r * v + j] - target);
                    }
                }
            }
            Op::Sum(x) => {
                let n = get(*x)?.len();
                let d = slot(grads, *x, n);
                d.iter_mut().for_each(|a| *a += dy[0]);
            }
            Op::Reshape(x, _) => {
                let d = slot(grads, *x, dy.len());
                d.iter_mut().zip(dy).for_each(|(a, g)| *a += g);
            }
        }
        Ok(())
    }

    /// Sign pattern of every ReLU input; used to detect kinks crossed by a
    /// finite-difference probe.
    pub(crate) fn relu_pattern(&self, bindings: &Bindings) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.fetch(bindings, x)?.data().iter().map(|&v| v > 0.0));
            }
        }
        Ok(out)
    }

    /// Names of all inputs the graph reads, in first-use order.
    pub fn input_names(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for node in &self.nodes {
            if let Op::Input(name) = &node.op {
                if !seen.contains(name) {
                    seen.push(name.clone());
                }
            }
        }
        seen
    }
}

fn as_matrix(id: NodeId, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::shape(id, format!("expected a matrix, got {other:?}"))),
    }
}

fn check_attn(id: NodeId, g: &AttnGeom, qr: usize, kr: usize, d: usize, d2: usize) -> Result<()> {
    if g.heads == 0 || !d.is_multiple_of(g.heads) || d != d2 || qr != g.batch * g.q_len || kr != g.batch * g.k_len {
        return Err(Error::shape(id, format!("attention q rows {qr}, k rows {kr}, widths {d}/{d2} for {g:?}")));
    }
    Ok(())
}
