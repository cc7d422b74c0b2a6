//! Soft actor-critic agent for exposure control.
//!
//! Networks are small hand-written convolutional stacks over flat `f32`
//! parameter vectors; matrix products go through `matrixmultiply`.

pub mod checkpoint;
pub mod controller;
pub mod gradcheck;
pub mod nn;
pub mod network;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod train;

pub use controller::DrlController;
pub use replay::{ReplayBuffer, Transition};
pub use sac::{Losses, SacAgent, SacConfig};
pub use train::{evaluate, EpisodeRecord, Trainer};

use expolab_core::scene::SceneError;

#[derive(Debug, thiserror::Error)]
pub enum DrlError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
