use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EmbeddingTying, ModelConfig};
use crate::autograd::{Bindings, Tensor};
use crate::error::{Error, Result};

/// Named partition of the model parameters; the unit of selective
/// initialization and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    SrcEmbed,
    Encoder,
    TgtEmbed,
    Decoder,
    OutProj,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Encoder,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::SrcEmbed,
        ParamGroup::Encoder,
        ParamGroup::TgtEmbed,
        ParamGroup::Decoder,
        ParamGroup::OutProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::SrcEmbed => "src_embed",
            ParamGroup::Encoder => "encoder",
            ParamGroup::TgtEmbed => "tgt_embed",
            ParamGroup::Decoder => "decoder",
            ParamGroup::OutProj => "out_proj",
        }
    }

    /// Encoder side is `{src_embed, encoder}`; the output projection counts
    /// as decoder side.
    pub fn side(self) -> Side {
        match self {
            ParamGroup::SrcEmbed | ParamGroup::Encoder => Side::Encoder,
            _ => Side::Decoder,
        }
    }

    pub fn on_side(side: Side) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |g| g.side() == side)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::UnknownGroup(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// U(-a, a) with a = sqrt(3 / d), i.e. unit variance after the sqrt(d)
    /// input scaling.
    Embedding { d: usize },
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    init: Init,
}

fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    let mut push = |name: String, group, shape: Vec<usize>, init| out.push(ParamSpec { name, group, shape, init });
    let xavier = |fan_in, fan_out| Init::Xavier { fan_in, fan_out };

    push("src_embed.weight".into(), ParamGroup::SrcEmbed, vec![cfg.src_vocab_size, d], Init::Embedding { d });
    push("tgt_embed.weight".into(), ParamGroup::TgtEmbed, vec![cfg.tgt_vocab_size, d], Init::Embedding { d });

    let attention = |push: &mut dyn FnMut(String, ParamGroup, Vec<usize>, Init), prefix: &str, group| {
        for p in ["q", "k", "v", "o"] {
            push(format!("{prefix}.{p}.weight"), group, vec![d, d], xavier(d, d));
            push(format!("{prefix}.{p}.bias"), group, vec![d], Init::Zeros);
        }
    };
    let norm = |push: &mut dyn FnMut(String, ParamGroup, Vec<usize>, Init), prefix: &str, group| {
        push(format!("{prefix}.gain"), group, vec![d], Init::Ones);
        push(format!("{prefix}.bias"), group, vec![d], Init::Zeros);
    };
    let ffn = |push: &mut dyn FnMut(String, ParamGroup, Vec<usize>, Init), prefix: &str, group| {
        push(format!("{prefix}.fc1.weight"), group, vec![d, cfg.d_ff], xavier(d, cfg.d_ff));
        push(format!("{prefix}.fc1.bias"), group, vec![cfg.d_ff], Init::Zeros);
        push(format!("{prefix}.fc2.weight"), group, vec![cfg.d_ff, d], xavier(cfg.d_ff, d));
        push(format!("{prefix}.fc2.bias"), group, vec![d], Init::Zeros);
    };

    for l in 0..cfg.num_layers {
        let p = format!("encoder.layers.{l}");
        attention(&mut push, &format!("{p}.self_attn"), ParamGroup::Encoder);
        norm(&mut push, &format!("{p}.self_attn_norm"), ParamGroup::Encoder);
        ffn(&mut push, &format!("{p}.ffn"), ParamGroup::Encoder);
        norm(&mut push, &format!("{p}.ffn_norm"), ParamGroup::Encoder);
    }
    norm(&mut push, "encoder.final_norm", ParamGroup::Encoder);
    for l in 0..cfg.num_layers {
        let p = format!("decoder.layers.{l}");
        attention(&mut push, &format!("{p}.self_attn"), ParamGroup::Decoder);
        norm(&mut push, &format!("{p}.self_attn_norm"), ParamGroup::Decoder);
        attention(&mut push, &format!("{p}.cross_attn"), ParamGroup::Decoder);
        norm(&mut push, &format!("{p}.cross_attn_norm"), ParamGroup::Decoder);
        ffn(&mut push, &format!("{p}.ffn"), ParamGroup::Decoder);
        norm(&mut push, &format!("{p}.ffn_norm"), ParamGroup::Decoder);
    }
    norm(&mut push, "decoder.final_norm", ParamGroup::Decoder);
    push("out_proj.weight".into(), ParamGroup::OutProj, vec![cfg.tgt_vocab_size, d], xavier(d, cfg.tgt_vocab_size));
    push("out_proj.bias".into(), ParamGroup::OutProj, vec![cfg.tgt_vocab_size], Init::Zeros);
    out
}

fn aliases_for(tying: EmbeddingTying) -> BTreeMap<String, String> {
    let pairs: &[(&str, &str)] = match tying {
        EmbeddingTying::Untied => &[],
        EmbeddingTying::TiedTgtOut => &[("out_proj.weight", "tgt_embed.weight")],
        EmbeddingTying::TiedAll => &[
            ("tgt_embed.weight", "src_embed.weight"),
            ("out_proj.weight", "src_embed.weight"),
        ],
    };
    pairs.iter().map(|(a, o)| (a.to_string(), o.to_string())).collect()
}

fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let mut rng = param_rng(seed, &spec.name);
    let mut uniform = |a: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..a)).collect() };
    let data = match spec.init {
        Init::Xavier { fan_in, fan_out } => uniform((6.0 / (fan_in + fan_out) as f64).sqrt()),
        Init::Embedding { d } => uniform((3.0 / d as f64).sqrt()),
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
    };
    Tensor::from_parts(spec.shape.clone(), data)
}

/// Transformer parameters partitioned into [`ParamGroup`]s. Tied tensors
/// are stored once under their owner name; aliases record the sharing.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Bindings,
    groups: BTreeMap<String, ParamGroup>,
    aliases: BTreeMap<String, String>,
}

impl Model {
    /// Fresh parameters: scaled-uniform matrices, zero biases, unit
    /// layer-norm gains. Each tensor draws from its own stream keyed by
    /// `(seed, name)`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let aliases = aliases_for(config.embedding_tying);
        let mut params = Bindings::new();
        let mut groups = BTreeMap::new();
        for spec in param_specs(&config) {
            if aliases.contains_key(&spec.name) {
                continue;
            }
            params.insert(spec.name.clone(), init_tensor(&spec, seed));
            groups.insert(spec.name, spec.group);
        }
        Ok(Model {
            config,
            params,
            groups,
            aliases,
        })
    }

    /// Reassembles a model from stored parts, checking names and shapes
    /// against the configuration without allocating new tensors.
    pub fn from_parts(config: ModelConfig, params: Bindings) -> Result<Self> {
        config.validate()?;
        if config.num_layers > params.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} layers cannot fit in {} tensors",
                config.num_layers,
                params.len()
            )));
        }
        let aliases = aliases_for(config.embedding_tying);
        let specs: Vec<ParamSpec> = param_specs(&config)
            .into_iter()
            .filter(|s| !aliases.contains_key(&s.name))
            .collect();
        if specs.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let mut groups = BTreeMap::new();
        for spec in specs {
            match params.get(&spec.name) {
                Some(p) if p.shape() == spec.shape.as_slice() => {}
                Some(p) => {
                    return Err(Error::ConfigMismatch(format!(
                        "`{}` has shape {:?}, expected {:?}",
                        spec.name,
                        p.shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::ConfigMismatch(format!("missing tensor `{}`", spec.name))),
            }
            groups.insert(spec.name, spec.group);
        }
        Ok(Model {
            config,
            params,
            groups,
            aliases,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.config.dropout_rate = rate;
    }

    pub fn params(&self) -> &Bindings {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Bindings {
        &mut self.params
    }

    /// Owner name for `name`, following an alias if there is one.
    pub fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        self.groups.get(self.resolve(name)).copied()
    }

    pub fn names_in(&self, group: ParamGroup) -> impl Iterator<Item = &str> {
        self.groups.iter().filter(move |(_, g)| **g == group).map(|(n, _)| n.as_str())
    }

    /// Groups that own at least one tensor (tying can empty a group).
    pub fn groups(&self) -> BTreeSet<ParamGroup> {
        self.groups.values().copied().collect()
    }

    /// Groups whose computations read tensors owned by another side.
    pub fn shared_across_sides(&self) -> Vec<(String, String)> {
        self.aliases
            .iter()
            .filter(|(alias, owner)| {
                let alias_group = alias_group(alias);
                alias_group.side() != self.groups[owner.as_str()].side()
            })
            .map(|(a, o)| (a.clone(), o.clone()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Every owned tensor belongs to exactly one group and every group
    /// entry names an owned tensor.
    pub fn check_partition(&self) -> Result<()> {
        let owned: BTreeSet<&String> = self.params.keys().collect();
        let grouped: BTreeSet<&String> = self.groups.keys().collect();
        if owned != grouped {
            return Err(Error::Config("parameter groups do not partition the parameters".into()));
        }
        for (alias, owner) in &self.aliases {
            if self.params.contains_key(alias) || !self.params.contains_key(owner) {
                return Err(Error::Config(format!("bad alias {alias} -> {owner}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values of the tensors in `groups`.
    pub fn digest(&self, groups: &[ParamGroup]) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            if groups.contains(&self.groups[name]) {
                h.update(name.as_bytes());
                for d in t.shape() {
                    h.update((*d as u64).to_le_bytes());
                }
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn full_digest(&self) -> String {
        self.digest(&ParamGroup::ALL)
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }
}

/// Group a (possibly aliased) tensor name belongs to by its prefix.
fn alias_group(name: &str) -> ParamGroup {
    let prefix = name.split('.').next().unwrap_or_default();
    prefix.parse().unwrap_or(ParamGroup::Decoder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            d_ff: 16,
            src_vocab_size: 12,
            tgt_vocab_size: 12,
            dropout_rate: 0.0,
            max_positions: 16,
            embedding_tying: EmbeddingTying::Untied,
        }
    }

    #[test]
    fn partition_and_determinism() {
        let a = Model::build(tiny(), 3).unwrap();
        a.check_partition().unwrap();
        assert_eq!(a, Model::build(tiny(), 3).unwrap());
        assert_ne!(a.full_digest(), Model::build(tiny(), 4).unwrap().full_digest());
        for g in ParamGroup::ALL {
            assert!(a.names_in(g).count() > 0);
        }
    }

    #[test]
    fn tying_keeps_one_owner() {
        let cfg = ModelConfig {
            embedding_tying: EmbeddingTying::TiedAll,
            ..tiny()
        };
        let m = Model::build(cfg, 1).unwrap();
        m.check_partition().unwrap();
        assert!(!m.params().contains_key("out_proj.weight"));
        assert_eq!(m.resolve("out_proj.weight"), "src_embed.weight");
        assert_eq!(m.shared_across_sides().len(), 2);

        let cfg = ModelConfig {
            embedding_tying: EmbeddingTying::TiedTgtOut,
            ..tiny()
        };
        let m = Model::build(cfg, 1).unwrap();
        assert!(m.shared_across_sides().is_empty());
    }

    #[test]
    fn group_names_parse() {
        assert_eq!("decoder".parse::<ParamGroup>().unwrap(), ParamGroup::Decoder);
        assert!(matches!("decodr".parse::<ParamGroup>(), Err(Error::UnknownGroup(_))));
    }
}
