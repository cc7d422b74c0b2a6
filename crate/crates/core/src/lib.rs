//! Core of the exposure-control laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`photometry`]: exposure algebra, camera response calibration and
//!   re-synthesis of images at arbitrary exposures.
//! * [`scene`]: bracketed sequences, the procedural HDR scene generator,
//!   motion augmentation and the episodic training environment.
//! * [`vision`]: ORB features, matching, robust homography, two-view pose
//!   recovery and SO(3) utilities.
//! * [`rewards`]: the statistical, feature and pose rewards.
//! * [`controllers`]: classical exposure controllers and exposure allocation.

pub mod controllers;
pub mod photometry;
pub mod rewards;
pub mod scene;
pub mod vision;

pub use photometry::{CameraResponse, Exposure, Image, IrradianceMap, PhotometryError};
