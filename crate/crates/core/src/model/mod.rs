//! Encoder–decoder transformer with named parameter groups.

mod checkpoint;
mod config;
mod init;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, Provenance, Stage, FORMAT_VERSION, MAGIC};
pub use config::{EmbeddingTying, ModelConfig};
pub(crate) use init::check_split;
pub use init::{selective_init, InitMask};
pub use params::{Model, ParamGroup, Side};
pub use transformer::{
    batch_nll, decode_step, encode, forward_nmt, nmt_loss_graph, sinusoidal_positions, EncoderState, NmtBatch,
};

/// Fresh model; see [`Model::build`].
pub fn build_model(config: ModelConfig, seed: u64) -> crate::Result<Model> {
    Model::build(config, seed)
}
