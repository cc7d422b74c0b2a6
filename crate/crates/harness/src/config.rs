//! JSON run configuration shared by every subcommand.
//!
//! Only `seed` is mandatory; each command reads the sections it needs and
//! reports a missing one by key. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use expolab_core::controllers::{BuiltinController, GradientController, OneShotController};
use expolab_core::photometry::CameraResponse;
use expolab_core::rewards::{RewardConfig, RewardKind};
use expolab_core::scene::{EnvConfig, SceneSpec};
use expolab_drl::SacConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Sequence directories; the first one is used for evaluation.
    #[serde(default)]
    pub sequences: Vec<PathBuf>,
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    /// Camera response for generated scenes; gamma 2.2 when absent.
    #[serde(default)]
    pub crf: Option<CrfSource>,
    #[serde(default)]
    pub reward: RewardSettings,
    #[serde(default)]
    pub controllers: Vec<ControllerConfig>,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub react: ReactSettings,
    #[serde(default)]
    pub calibration: CalibrationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenePreset {
    Switching,
    React,
}

/// Either a named preset with a frame count or a full scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneConfig {
    Preset { preset: ScenePreset, frames: usize },
    Custom(SceneSpec),
}

impl SceneConfig {
    pub fn spec(&self) -> SceneSpec {
        match self {
            SceneConfig::Preset { preset: ScenePreset::Switching, frames } => SceneSpec::switching(*frames),
            SceneConfig::Preset { preset: ScenePreset::React, frames } => SceneSpec::react(*frames),
            SceneConfig::Custom(spec) => spec.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CrfSource {
    Gamma(f64),
    File(PathBuf),
}

impl CrfSource {
    pub fn load(&self) -> Result<CameraResponse> {
        Ok(match self {
            CrfSource::Gamma(g) => CameraResponse::gamma(*g),
            CrfSource::File(p) => CameraResponse::load(p)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSettings {
    pub kind: RewardKind,
    pub config: RewardConfig,
}

impl Default for RewardSettings {
    fn default() -> Self {
        Self { kind: RewardKind::Stat, config: RewardConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControllerConfig {
    Builtin(BuiltinController),
    Gradient(GradientController),
    Oneshot(OneShotController),
    Drl(DrlSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrlSettings {
    pub checkpoint: PathBuf,
}

impl ControllerConfig {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerConfig::Builtin(_) => "builtin",
            ControllerConfig::Gradient(_) => "gradient",
            ControllerConfig::Oneshot(_) => "oneshot",
            ControllerConfig::Drl(_) => "drl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub episodes: usize,
    /// Episodes between resumable snapshots; 0 disables them.
    pub checkpoint_every: usize,
    /// Episodes between deterministic evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Window of the median filter applied to the reward curves.
    pub filter_window: usize,
    /// Train with and without augmentation and compare the eval slopes.
    pub ablation: bool,
    pub ablation_seeds: Vec<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { episodes: 100, checkpoint_every: 1000, eval_every: 10, eval_episodes: 5, filter_window: 100, ablation: false, ablation_seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub initial_exposure_us: f64,
    /// Run ORB and RANSAC on every frame for N_detect / N_match.
    pub features: bool,
    pub max_frames: Option<usize>,
    /// Also write every rendered frame as `frames/NNNNNN.pgm`.
    pub save_frames: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { initial_exposure_us: 1000.0, features: true, max_frames: None, save_frames: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactSettings {
    /// Scene seeds; each generates one react scene.
    pub seeds: Vec<u64>,
    pub frames: usize,
    pub initial_exposure_us: f64,
    /// Frames averaged before an event to get the steady value.
    pub steady_window: usize,
    pub tolerance: f64,
    pub hold_frames: usize,
    pub censor_at: usize,
}

impl Default for ReactSettings {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], frames: 300, initial_exposure_us: 1000.0, steady_window: 10, tolerance: 0.15, hold_frames: 3, censor_at: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Number of bracketed frames used as calibration stacks.
    pub frames: usize,
    pub sample_sites: usize,
    pub smoothness: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { frames: 3, sample_sites: 256, smoothness: 5.0 }
    }
}

impl RunConfig {
    /// Minimal configuration with every section at its default.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            HarnessError::Config { path: origin.into(), key, message: e.into_inner().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HarnessError::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Checks that every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = self.sequences.iter().map(PathBuf::as_path).collect();
        if let Some(CrfSource::File(p)) = &self.crf {
            paths.push(p);
        }
        for c in &self.controllers {
            if let ControllerConfig::Drl(d) = c {
                paths.push(&d.checkpoint);
            }
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(HarnessError::MissingPath(p.to_path_buf())),
            None => Ok(()),
        }
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| missing("output_dir"))
    }

    pub fn response(&self) -> Result<CameraResponse> {
        self.crf.as_ref().map_or_else(|| Ok(CameraResponse::gamma(2.2)), CrfSource::load)
    }

    /// Environment settings with the episode length taken from `sac`.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { episode_len: self.sac.episode_len, ..self.env.clone() }
    }
}

pub fn missing(key: &str) -> HarnessError {
    HarnessError::Config { path: "<config>".into(), key: key.into(), message: "required by this command".into() }
}
