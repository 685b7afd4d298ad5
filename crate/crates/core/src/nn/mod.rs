//! Tiny trainable denoiser: parameters, forward/backward, AdamW, checkpoints.

mod checkpoint;
mod net;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{Condition, DenoiserNet, NetSpec, PredictionKind, Tape};
pub use optim::{clip_grad_norm, OptimizerState};
pub use params::ParamStore;
