#![allow(dead_code)]

use nmt_probe::autograd::{AttnGeom, AttnMask, Bindings, Graph, NodeId, Tensor};
use nmt_probe::data::vocab::TokenId;
use nmt_probe::model::{EmbeddingTying, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum of `x` with fixed random weights, so every output component
/// carries a distinct gradient.
fn project(g: &mut Graph, rng: &mut ChaCha8Rng, x: NodeId, shape: &[usize]) -> NodeId {
    let w = g.constant(rand_tensor(rng, shape));
    let m = g.mul(x, w);
    g.sum(m)
}

pub struct OpCase {
    pub name: &'static str,
    pub graph: Graph,
    pub bindings: Bindings,
}

/// One small scalar graph per differentiable op, with random inputs.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    let bind = |names: &[(&str, &[usize])], r: &mut ChaCha8Rng| -> Bindings {
        names.iter().map(|(n, s)| (n.to_string(), rand_tensor(r, s))).collect()
    };

    macro_rules! case {
        ($name:expr, $inputs:expr, |$g:ident, $r:ident, $i:ident| $body:block) => {{
            let bindings = bind($inputs, &mut r);
            let mut $g = Graph::new();
            let $i: Vec<NodeId> = $inputs.iter().map(|(n, _)| $g.input(*n)).collect();
            let $r = &mut r;
            $body;
            cases.push(OpCase {
                name: $name,
                graph: $g,
                bindings,
            });
        }};
    }

    case!("matmul", &[("a", &[3, 4][..]), ("b", &[4, 2][..])], |g, r, i| {
        let y = g.matmul(i[0], i[1]);
        project(&mut g, r, y, &[3, 2]);
    });
    case!("matmul_bt", &[("a", &[3, 4][..]), ("b", &[5, 4][..])], |g, r, i| {
        let y = g.matmul_bt(i[0], i[1]);
        project(&mut g, r, y, &[3, 5]);
    });
    case!("add_bias", &[("x", &[3, 4][..]), ("b", &[4][..])], |g, r, i| {
        let y = g.add_bias(i[0], i[1]);
        project(&mut g, r, y, &[3, 4]);
    });
    case!("add", &[("a", &[2, 3][..]), ("b", &[2, 3][..])], |g, r, i| {
        let y = g.add(i[0], i[1]);
        project(&mut g, r, y, &[2, 3]);
    });
    case!("mul", &[("a", &[2, 3][..]), ("b", &[2, 3][..])], |g, r, i| {
        let y = g.mul(i[0], i[1]);
        project(&mut g, r, y, &[2, 3]);
    });
    case!("scale", &[("x", &[2, 3][..])], |g, r, i| {
        let y = g.scale(i[0], -1.7);
        project(&mut g, r, y, &[2, 3]);
    });
    case!("relu", &[("x", &[4, 5][..])], |g, r, i| {
        let y = g.relu(i[0]);
        project(&mut g, r, y, &[4, 5]);
    });
    case!("softmax", &[("x", &[3, 5][..])], |g, r, i| {
        let y = g.softmax(i[0]);
        project(&mut g, r, y, &[3, 5]);
    });
    case!("layer_norm", &[("x", &[3, 6][..]), ("g", &[6][..]), ("b", &[6][..])], |g, r, i| {
        let y = g.layer_norm(i[0], i[1], i[2], 1e-5);
        project(&mut g, r, y, &[3, 6]);
    });
    case!("embedding", &[("t", &[5, 3][..])], |g, r, i| {
        let y = g.embedding(i[0], vec![4, 0, 4, 2]);
        project(&mut g, r, y, &[4, 3]);
    });
    case!("dropout", &[("x", &[4, 4][..])], |g, r, i| {
        let y = g.dropout(i[0], 0.3, 99, true);
        project(&mut g, r, y, &[4, 4]);
    });
    case!("reshape", &[("x", &[2, 6][..])], |g, r, i| {
        let y = g.reshape(i[0], vec![3, 4]);
        project(&mut g, r, y, &[3, 4]);
    });
    case!("sum", &[("x", &[2, 3][..])], |g, _r, i| {
        let y = g.mul(i[0], i[0]);
        g.sum(y);
    });
    let geom = AttnGeom {
        batch: 2,
        heads: 2,
        q_len: 3,
        k_len: 4,
    };
    case!("attn_scores", &[("q", &[6, 4][..]), ("k", &[8, 4][..])], |g, r, i| {
        let y = g.attn_scores(i[0], i[1], geom);
        project(&mut g, r, y, &[12, 4]);
    });
    case!("masked_softmax", &[("x", &[12, 4][..])], |g, r, i| {
        let mask = AttnMask {
            geom,
            key_pad: Some(vec![false, false, false, true, false, false, true, true]),
            causal: true,
        };
        let y = g.masked_softmax(i[0], mask);
        project(&mut g, r, y, &[12, 4]);
    });
    case!("attn_context", &[("w", &[12, 4][..]), ("v", &[8, 4][..])], |g, r, i| {
        let y = g.attn_context(i[0], i[1], geom);
        project(&mut g, r, y, &[6, 4]);
    });
    case!("cross_entropy", &[("x", &[4, 6][..])], |g, _r, i| {
        g.cross_entropy(i[0], vec![1, 0, 5, 3], 0.1, 0);
    });
    cases
}

pub fn tiny_config(vocab: usize, tying: EmbeddingTying) -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        d_model: 8,
        num_heads: 2,
        d_ff: 16,
        src_vocab_size: vocab,
        tgt_vocab_size: vocab,
        dropout_rate: 0.0,
        max_positions: 24,
        embedding_tying: tying,
    }
}

pub fn tiny_model(vocab: usize, seed: u64) -> Model {
    Model::build(tiny_config(vocab, EmbeddingTying::Untied), seed).unwrap()
}

/// Every tensor of `groups` in `a` bit-equals the one in `b`.
pub fn groups_bit_equal(a: &Model, b: &Model, groups: &[nmt_probe::model::ParamGroup]) -> bool {
    groups
        .iter()
        .flat_map(|&g| a.names_in(g).map(str::to_string).collect::<Vec<_>>())
        .all(|n| a.params()[&n].bit_eq(&b.params()[&n]))
}

/// A complete experiment small enough to run end to end in seconds.
pub const TINY_EXPERIMENT: &str = r#"
seeds = [1, 2]
shared_seed = 5

[data]
bitext = 40
valid = 10
test_src_original = 6
test_tgt_original = 6
mono_pretrain = 40
mono_bt = 20
pretrain_valid_fraction = 0.1

[synth]
content_vocab_size = 10
min_len = 2
max_len = 6

[model]
num_layers = 1
d_model = 8
num_heads = 2
d_ff = 16
src_vocab_size = 26
tgt_vocab_size = 26
dropout_rate = 0.1
max_positions = 16

[pretrain]
total_steps = 12
warmup_steps = 4
batch_tokens = 64
validation_interval = 6

[train]
total_steps = 10
warmup_steps = 4
batch_tokens = 64
validation_interval = 5

[finetune]
total_steps = 6
warmup_steps = 2
batch_tokens = 64
validation_interval = 3

[beam]
beam_size = 2

[bt_beam]
beam_size = 2
"#;

pub fn tiny_experiment() -> nmt_probe::harness::ExperimentConfig {
    nmt_probe::harness::ExperimentConfig::parse_toml(TINY_EXPERIMENT).unwrap()
}

/// Counts of `gram` in `s` by linear scan.
fn occurrences(s: &[TokenId], gram: &[TokenId]) -> u64 {
    if gram.len() > s.len() {
        return 0;
    }
    (0..=s.len() - gram.len()).filter(|&i| &s[i..i + gram.len()] == gram).count() as u64
}

/// BLEU computed from first principles: clipped counts per distinct
/// n-gram found by scanning, geometric mean, brevity penalty.
pub fn brute_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> f64 {
    let (mut h_len, mut r_len) = (0u64, 0u64);
    let mut log_p = 0.0;
    let mut per_order = [(0u64, 0u64); 4];
    for (h, r) in hyps.iter().zip(refs) {
        h_len += h.len() as u64;
        r_len += r.len() as u64;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[TokenId]> = Vec::new();
            for i in 0..=h.len() - n {
                let g = &h[i..i + n];
                per_order[n - 1].1 += 1;
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                per_order[n - 1].0 += occurrences(h, g).min(occurrences(r, g));
            }
        }
    }
    if h_len == 0 {
        return 0.0;
    }
    for (m, t) in per_order {
        if m == 0 {
            return 0.0;
        }
        log_p += (m as f64 / t as f64).ln() / 4.0;
    }
    let bp = if h_len < r_len { (1.0 - r_len as f64 / h_len as f64).exp() } else { 1.0 };
    100.0 * bp * log_p.exp()
}
