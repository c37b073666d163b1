//! Vocabulary, origin-labelled corpora, the synthetic language pair,
//! denoising noise, back-translation tagging and corpus mixing.

pub mod corpus;
mod mix;
mod noise;
pub mod synth;
pub mod vocab;

pub use corpus::{CorpusFiles, Origin, SentencePair};
pub use mix::{mix_corpora, strip_bt_tag, tag_bt_source};
pub use noise::{apply_denoise_noise, NoiseConfig};
pub use synth::{synth_parallel, SynthTask, SynthTaskSpec};
pub use vocab::{TokenId, Vocab};
