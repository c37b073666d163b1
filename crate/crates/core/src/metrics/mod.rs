//! BLEU, TER, frequency-bucketed word F-measure and origin-split scoring.

mod bleu;
mod fmeasure;
mod report;
mod ter;

pub use bleu::{bleu_stats, corpus_bleu, BleuConfig, BleuSmoothing, BleuStats};
pub use fmeasure::{target_frequencies, word_fmeasure, Bucket, FreqBuckets, Prf};
pub use report::{evaluate, split_eval_by_origin, EvalReport, OriginBleu};
pub use ter::{edit_distance, ter, ter_edits};
