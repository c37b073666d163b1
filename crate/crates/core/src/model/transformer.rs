use std::collections::BTreeMap;

use super::params::Model;
use crate::autograd::{AttnGeom, AttnMask, Graph, NodeId, Tensor};
use crate::data::vocab::{TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position table `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Padded, flattened training batch. Sources get a trailing EOS; the decoder
/// reads `BOS y` and predicts `y EOS`.
#[derive(Clone, Debug, PartialEq)]
pub struct NmtBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<TokenId>,
    pub tgt_in: Vec<TokenId>,
    pub tgt_out: Vec<TokenId>,
}

impl NmtBatch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a [TokenId], &'a [TokenId])>) -> Result<Self> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus("batch".into()));
        }
        let src_len = pairs.iter().map(|(s, _)| s.len() + 1).max().unwrap_or(1);
        let tgt_len = pairs.iter().map(|(_, t)| t.len() + 1).max().unwrap_or(1);
        let mut b = NmtBatch {
            batch: pairs.len(),
            src_len,
            tgt_len,
            src: Vec::with_capacity(pairs.len() * src_len),
            tgt_in: Vec::with_capacity(pairs.len() * tgt_len),
            tgt_out: Vec::with_capacity(pairs.len() * tgt_len),
        };
        for (s, t) in pairs {
            b.src.extend_from_slice(s);
            b.src.push(EOS);
            b.src.resize(b.src.len() + src_len - s.len() - 1, PAD);
            b.tgt_in.push(BOS);
            b.tgt_in.extend_from_slice(t);
            b.tgt_in.resize(b.tgt_in.len() + tgt_len - t.len() - 1, PAD);
            b.tgt_out.extend_from_slice(t);
            b.tgt_out.push(EOS);
            b.tgt_out.resize(b.tgt_out.len() + tgt_len - t.len() - 1, PAD);
        }
        Ok(b)
    }

    /// Non-pad target tokens.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|&&t| t != PAD).count()
    }
}

/// Appends transformer sub-graphs to a [`Graph`] whose inputs are the
/// model's owned parameter names.
struct Builder<'m> {
    pub g: Graph,
    model: &'m Model,
    train: bool,
    rate: f64,
    seed: u64,
    drop_count: u64,
    inputs: BTreeMap<String, NodeId>,
}

impl<'m> Builder<'m> {
    pub fn new(model: &'m Model, train: bool, seed: u64) -> Self {
        Builder {
            g: Graph::new(),
            model,
            train,
            rate: model.config().dropout_rate,
            seed,
            drop_count: 0,
            inputs: BTreeMap::new(),
        }
    }

    fn param(&mut self, name: &str) -> NodeId {
        let owner = self.model.resolve(name).to_string();
        if let Some(&id) = self.inputs.get(&owner) {
            return id;
        }
        let id = self.g.input(owner.clone());
        self.inputs.insert(owner, id);
        id
    }

    fn dropout(&mut self, x: NodeId) -> NodeId {
        if !self.train || self.rate == 0.0 {
            return x;
        }
        self.drop_count += 1;
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.drop_count);
        self.g.dropout(x, self.rate, seed, true)
    }

    fn linear(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        let y = self.g.matmul(x, w);
        self.g.add_bias(y, b)
    }

    fn norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let gain = self.param(&format!("{prefix}.gain"));
        let bias = self.param(&format!("{prefix}.bias"));
        self.g.layer_norm(x, gain, bias, LN_EPS)
    }

    fn embed(&mut self, table: &str, ids: &[TokenId], batch: usize, len: usize, vocab: usize) -> Result<NodeId> {
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::TokenOutOfRange { id, size: vocab });
        }
        let max = self.model.config().max_positions;
        if len > max {
            return Err(Error::SequenceTooLong { len, max });
        }
        let d = self.model.config().d_model;
        let t = self.param(table);
        let e = self.g.embedding(t, ids.to_vec());
        let e = self.g.scale(e, (d as f64).sqrt());
        let pe = sinusoidal_positions(len, d);
        let mut full = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            full.extend_from_slice(&pe);
        }
        let pe = self.g.constant(Tensor::from_parts(vec![batch * len, d], full));
        let x = self.g.add(e, pe);
        Ok(self.dropout(x))
    }

    fn attention(&mut self, xq: NodeId, xkv: NodeId, prefix: &str, mask: AttnMask) -> NodeId {
        let q = self.linear(xq, &format!("{prefix}.q"));
        let k = self.linear(xkv, &format!("{prefix}.k"));
        let v = self.linear(xkv, &format!("{prefix}.v"));
        let geom = mask.geom;
        let s = self.g.attn_scores(q, k, geom);
        let w = self.g.masked_softmax(s, mask);
        let c = self.g.attn_context(w, v, geom);
        self.linear(c, &format!("{prefix}.o"))
    }

    fn residual(&mut self, x: NodeId, sub: NodeId) -> NodeId {
        let sub = self.dropout(sub);
        self.g.add(x, sub)
    }

    fn ffn(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let h = self.linear(x, &format!("{prefix}.fc1"));
        let h = self.g.relu(h);
        let h = self.dropout(h);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    /// Encoder output `[batch * src_len, d]`.
    pub fn encoder(&mut self, src: &[TokenId], batch: usize, src_len: usize) -> Result<NodeId> {
        let cfg = self.model.config().clone();
        let mut x = self.embed("src_embed.weight", src, batch, src_len, cfg.src_vocab_size)?;
        let mask = AttnMask {
            geom: AttnGeom {
                batch,
                heads: cfg.num_heads,
                q_len: src_len,
                k_len: src_len,
            },
            key_pad: Some(src.iter().map(|&t| t == PAD).collect()),
            causal: false,
        };
        for l in 0..cfg.num_layers {
            let p = format!("encoder.layers.{l}");
            let h = self.norm(x, &format!("{p}.self_attn_norm"));
            let a = self.attention(h, h, &format!("{p}.self_attn"), mask.clone());
            x = self.residual(x, a);
            let h = self.norm(x, &format!("{p}.ffn_norm"));
            let f = self.ffn(h, &format!("{p}.ffn"));
            x = self.residual(x, f);
        }
        Ok(self.norm(x, "encoder.final_norm"))
    }

    /// Logits `[batch * tgt_len, tgt_vocab]`.
    pub fn decoder(
        &mut self,
        memory: NodeId,
        src_pad: Vec<bool>,
        src_len: usize,
        tgt_in: &[TokenId],
        batch: usize,
        tgt_len: usize,
    ) -> Result<NodeId> {
        let cfg = self.model.config().clone();
        let mut y = self.embed("tgt_embed.weight", tgt_in, batch, tgt_len, cfg.tgt_vocab_size)?;
        let self_mask = AttnMask {
            geom: AttnGeom {
                batch,
                heads: cfg.num_heads,
                q_len: tgt_len,
                k_len: tgt_len,
            },
            key_pad: None,
            causal: true,
        };
        let cross_mask = AttnMask {
            geom: AttnGeom {
                batch,
                heads: cfg.num_heads,
                q_len: tgt_len,
                k_len: src_len,
            },
            key_pad: Some(src_pad),
            causal: false,
        };
        for l in 0..cfg.num_layers {
            let p = format!("decoder.layers.{l}");
            let h = self.norm(y, &format!("{p}.self_attn_norm"));
            let a = self.attention(h, h, &format!("{p}.self_attn"), self_mask.clone());
            y = self.residual(y, a);
            let h = self.norm(y, &format!("{p}.cross_attn_norm"));
            let a = self.attention(h, memory, &format!("{p}.cross_attn"), cross_mask.clone());
            y = self.residual(y, a);
            let h = self.norm(y, &format!("{p}.ffn_norm"));
            let f = self.ffn(h, &format!("{p}.ffn"));
            y = self.residual(y, f);
        }
        let y = self.norm(y, "decoder.final_norm");
        let w = self.param("out_proj.weight");
        let b = self.param("out_proj.bias");
        let logits = self.g.matmul_bt(y, w);
        Ok(self.g.add_bias(logits, b))
    }
}

/// Graph computing the label-smoothed training loss of `batch`; the scalar
/// loss is the graph's output node.
pub fn nmt_loss_graph(model: &Model, batch: &NmtBatch, smoothing: f64, train: bool, seed: u64) -> Result<Graph> {
    if batch.target_tokens() == 0 {
        return Err(Error::AllPadding);
    }
    let mut b = Builder::new(model, train, seed);
    let memory = b.encoder(&batch.src, batch.batch, batch.src_len)?;
    let pad = batch.src.iter().map(|&t| t == PAD).collect();
    let logits = b.decoder(memory, pad, batch.src_len, &batch.tgt_in, batch.batch, batch.tgt_len)?;
    b.g.cross_entropy(logits, batch.tgt_out.clone(), smoothing, PAD);
    Ok(b.g)
}

fn check_rect(rows: &[Vec<TokenId>], what: &'static str) -> Result<usize> {
    let len = rows.first().map(Vec::len).unwrap_or(0);
    if len == 0 {
        return Err(Error::Tensor(format!("{what} batch is empty")));
    }
    for r in rows {
        if r.len() != len {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: r.len(),
            });
        }
    }
    Ok(len)
}

/// Evaluation-mode logits `[B, T, tgt_vocab]` for already padded id
/// matrices. Source pads are masked out of attention; the decoder is causal.
pub fn forward_nmt(model: &Model, src_batch: &[Vec<TokenId>], tgt_in_batch: &[Vec<TokenId>]) -> Result<Tensor> {
    if src_batch.len() != tgt_in_batch.len() {
        return Err(Error::LengthMismatch {
            what: "source and target batch sizes",
            left: src_batch.len(),
            right: tgt_in_batch.len(),
        });
    }
    let s = check_rect(src_batch, "source")?;
    let t = check_rect(tgt_in_batch, "target")?;
    let batch = src_batch.len();
    let src: Vec<TokenId> = src_batch.concat();
    let tgt: Vec<TokenId> = tgt_in_batch.concat();
    let mut b = Builder::new(model, false, 0);
    let memory = b.encoder(&src, batch, s)?;
    let pad = src.iter().map(|&x| x == PAD).collect();
    let logits = b.decoder(memory, pad, s, &tgt, batch, t)?;
    let v = model.config().tgt_vocab_size;
    b.g.reshape(logits, vec![batch, t, v]);
    b.g.forward(model.params())
}

/// Encoder memory for one source sentence, reused across decoding steps.
#[derive(Clone, Debug)]
pub struct EncoderState {
    memory: Tensor,
    src_len: usize,
}

impl EncoderState {
    pub fn src_len(&self) -> usize {
        self.src_len
    }
}

/// Encodes `src` (EOS appended) in evaluation mode.
pub fn encode(model: &Model, src: &[TokenId]) -> Result<EncoderState> {
    let mut ids = src.to_vec();
    ids.push(EOS);
    let mut b = Builder::new(model, false, 0);
    b.encoder(&ids, 1, ids.len())?;
    let memory = b.g.forward(model.params())?;
    Ok(EncoderState {
        memory,
        src_len: ids.len(),
    })
}

/// Next-token log-probabilities after each prefix. All prefixes must have
/// the same length and start with BOS.
pub fn decode_step(model: &Model, state: &EncoderState, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
    let t = check_rect(prefixes, "prefix")?;
    let batch = prefixes.len();
    let d = model.config().d_model;
    let mut memory = Vec::with_capacity(batch * state.memory.len());
    for _ in 0..batch {
        memory.extend_from_slice(state.memory.data());
    }
    let mut b = Builder::new(model, false, 0);
    let mem = b.g.constant(Tensor::from_parts(vec![batch * state.src_len, d], memory));
    let tgt: Vec<TokenId> = prefixes.concat();
    b.decoder(mem, vec![false; batch * state.src_len], state.src_len, &tgt, batch, t)?;
    let logits = b.g.forward(model.params())?;
    let v = model.config().tgt_vocab_size;
    let mut out = Vec::with_capacity(batch);
    for i in 0..batch {
        let row = &logits.data()[((i + 1) * t - 1) * v..(i + 1) * t * v];
        let mut lp = vec![0.0; v];
        crate::autograd::kernels::log_softmax_row(row, &mut lp);
        out.push(lp);
    }
    Ok(out)
}

/// Mean token negative log-likelihood (no smoothing, no dropout) and the
/// token count, for perplexity.
pub fn batch_nll(model: &Model, batch: &NmtBatch) -> Result<(f64, usize)> {
    let mut g = nmt_loss_graph(model, batch, 0.0, false, 0)?;
    let loss = g.forward(model.params())?.data()[0];
    Ok((loss, batch.target_tokens()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{EmbeddingTying, ModelConfig};

    fn tiny(tying: EmbeddingTying) -> Model {
        let cfg = ModelConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            d_ff: 12,
            src_vocab_size: 10,
            tgt_vocab_size: 10,
            dropout_rate: 0.0,
            max_positions: 12,
            embedding_tying: tying,
        };
        Model::build(cfg, 5).unwrap()
    }

    #[test]
    fn batch_layout() {
        let b = NmtBatch::from_pairs([(&[6u32, 7][..], &[8u32][..]), (&[6u32][..], &[8u32, 9][..])]).unwrap();
        assert_eq!(b.src, vec![6, 7, EOS, 6, EOS, PAD]);
        assert_eq!(b.tgt_in, vec![BOS, 8, PAD, BOS, 8, 9]);
        assert_eq!(b.tgt_out, vec![8, EOS, PAD, 8, 9, EOS]);
        assert_eq!(b.target_tokens(), 5);
    }

    #[test]
    fn logits_shape_and_limits() {
        let m = tiny(EmbeddingTying::Untied);
        let out = forward_nmt(&m, &[vec![6, 7, 2]], &[vec![1, 8]]).unwrap();
        assert_eq!(out.shape(), &[1, 2, 10]);
        assert!(matches!(
            forward_nmt(&m, &[vec![6; 13]], &[vec![1]]),
            Err(Error::SequenceTooLong { len: 13, max: 12 })
        ));
        assert!(matches!(forward_nmt(&m, &[vec![10]], &[vec![1]]), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn step_matches_full_forward() {
        let m = tiny(EmbeddingTying::TiedAll);
        let st = encode(&m, &[6, 7]).unwrap();
        let lp = decode_step(&m, &st, &[vec![BOS, 8, 9]]).unwrap();
        let full = forward_nmt(&m, &[vec![6, 7, EOS]], &[vec![BOS, 8, 9]]).unwrap();
        let row = &full.data()[20..30];
        let mut expect = vec![0.0; 10];
        crate::autograd::kernels::log_softmax_row(row, &mut expect);
        for (a, b) in lp[0].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let m = tiny(EmbeddingTying::TiedTgtOut);
        let b = NmtBatch::from_pairs([(&[6u32, 7][..], &[8u32][..]), (&[9u32][..], &[7u32, 6][..])]).unwrap();
        let mut g = nmt_loss_graph(&m, &b, 0.1, false, 0).unwrap();
        let r = crate::autograd::finite_difference_check(&mut g, m.params(), 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
