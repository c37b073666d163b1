//! Beam-search decoding and back-translation.

mod beam;
mod bt;

pub use beam::{beam_search, beam_search_with, BeamConfig, Hypothesis, ModelScorer, StepScorer};
pub use bt::{
    back_translate, meta_to_string, parse_meta, read_meta, translate_all, write_meta, BackTranslation, DecodeMeta,
};
