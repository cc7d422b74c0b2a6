use std::path::PathBuf;

use expolab_core::controllers::ControlError;
use expolab_core::photometry::PhotometryError;
use expolab_core::rewards::RewardError;
use expolab_core::scene::SceneError;
use expolab_drl::DrlError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config {path}: key `{key}`: {message}")]
    Config { path: String, key: String, message: String },
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Photometry(#[from] PhotometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Drl(#[from] DrlError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
