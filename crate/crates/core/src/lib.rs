//! Desk-scale sequence-to-sequence workbench for probing how denoising
//! pre-training and back-translation act on the encoder and decoder of a
//! small transformer.

pub mod autograd;
pub mod data;
pub mod decode;
pub mod error;
#[doc(hidden)]
pub mod fuzzing;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
