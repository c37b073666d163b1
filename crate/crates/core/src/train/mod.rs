//! Adam training with warmup/decay, clipping, label smoothing and
//! group-level freezing.

mod batching;
mod config;
mod manifest;
mod optim;
mod trainer;

pub use batching::{batch_of, eval_batches, make_batches};
pub use config::TrainConfig;
pub use manifest::{config_hash, RunManifest};
pub use optim::{adam_step, apply_freeze, clip_global_norm, FreezeMask, Grads, OptimState};
pub use trainer::{
    batch_gradients, corpus_perplexity, smoothed_cross_entropy, train, train_with, CorpusValidator, TrainLog,
    TrainLogRow, TrainOutcome, Validator,
};
