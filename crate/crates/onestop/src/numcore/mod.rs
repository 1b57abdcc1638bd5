//! From-scratch numerical core: tensors, a reverse-mode autodiff tape, Adam,
//! checkpointing, and finite-difference gradient verification.
//!
//! Everything is generic over [`Scalar`] so the same graph code runs in `f32`
//! for training and `f64` for gradient checks.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use error::{NumError, NumResult};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{ParamId, Params};
pub use scalar::Scalar;
pub use tape::{log_softmax, NodeId, Reduction, Tape};
pub use tensor::{Mask, Tensor};
