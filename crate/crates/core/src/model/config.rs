use serde::{Deserialize, Serialize};

use crate::data::vocab::RESERVED;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingTying {
    Untied,
    /// Output projection shares the target embedding table.
    TiedTgtOut,
    /// Source embedding, target embedding and output projection share one
    /// table (requires equal vocabulary sizes).
    TiedAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Layers in each of the encoder and decoder stacks.
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
    pub embedding_tying: EmbeddingTying,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            d_model: 64,
            num_heads: 4,
            d_ff: 256,
            src_vocab_size: 406,
            tgt_vocab_size: 406,
            dropout_rate: 0.3,
            max_positions: 128,
            embedding_tying: EmbeddingTying::Untied,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.d_model == 0 || self.num_heads == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return fail("layer counts and widths must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!("d_model {} not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0,1)", self.dropout_rate));
        }
        if self.src_vocab_size <= RESERVED.len() || self.tgt_vocab_size <= RESERVED.len() {
            return fail("vocabularies must include the reserved tokens plus at least one word".into());
        }
        if self.embedding_tying == EmbeddingTying::TiedAll && self.src_vocab_size != self.tgt_vocab_size {
            return fail("tied_all requires equal source and target vocabulary sizes".into());
        }
        Ok(())
    }

    /// Equality of everything that determines parameter shapes and
    /// sharing. Dropout is a training setting and is ignored.
    pub fn same_geometry(&self, other: &ModelConfig) -> bool {
        ModelConfig {
            dropout_rate: 0.0,
            ..self.clone()
        } == ModelConfig {
            dropout_rate: 0.0,
            ..other.clone()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}
