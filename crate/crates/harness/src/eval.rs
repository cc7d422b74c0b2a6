//! Closed-loop evaluation of one controller on one sequence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use expolab_core::controllers::{
    allocate, AllocLimits, BuiltinController, ControlInput, ExposureController, GradientController, OneShotController,
};
use expolab_core::photometry::{clamp_exposure, CameraResponse, Image};
use expolab_core::rewards::{feature_counts, RewardConfig, RewardFunction, StepContext};
use expolab_core::scene::{render_from_bracket, BracketedSequence};
use expolab_core::vision::detect_features;
use expolab_drl::DrlController;

use crate::config::{ControllerConfig, EvalSettings};
use crate::error::Result;
use crate::plot::{line_plot, Series};

/// Bumped whenever the metrics CSV columns change.
pub const METRICS_VERSION: u32 = 1;

/// A frame counts towards saturation time when more than this fraction of
/// its pixels sit at 0 or 255.
pub const SATURATED_FRAME_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: usize,
    pub time_us: f64,
    pub gain_db: f64,
    pub exposure: f64,
    pub mean_intensity: f64,
    /// Fraction of pixels at 0 or 255.
    pub saturation: f64,
    pub n_detect: usize,
    pub n_match: usize,
    /// Reward of the step into this frame; 0 on the first frame.
    pub reward: f64,
    /// The controller failed after this frame and the exposure was held.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics_version: u32,
    pub controller: String,
    pub frames: usize,
    pub mean_n_match: f64,
    pub min_n_match: usize,
    pub total_reward: f64,
    pub saturation_time_fraction: f64,
    pub flagged_frames: usize,
}

impl EvalSummary {
    pub fn from_rows(controller: &str, rows: &[MetricsRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            metrics_version: METRICS_VERSION,
            controller: controller.into(),
            frames: rows.len(),
            mean_n_match: rows.iter().map(|r| r.n_match as f64).sum::<f64>() / n,
            min_n_match: rows.iter().map(|r| r.n_match).min().unwrap_or(0),
            total_reward: rows.iter().map(|r| r.reward).sum(),
            saturation_time_fraction: rows.iter().filter(|r| r.saturation > SATURATED_FRAME_FRACTION).count() as f64 / n,
            flagged_frames: rows.iter().filter(|r| r.flagged).count(),
        }
    }
}

/// Instantiates a configured controller; the one-shot controller gets the
/// sequence's camera response.
pub fn build_controller(config: &ControllerConfig, response: &CameraResponse) -> Result<Box<dyn ExposureController>> {
    Ok(match config {
        ControllerConfig::Builtin(c) => Box::new(BuiltinController::clone(c)),
        ControllerConfig::Gradient(c) => Box::new(GradientController::clone(c)),
        ControllerConfig::Oneshot(c) => Box::new(OneShotController { response: Some(response.clone()), ..c.clone() }),
        ControllerConfig::Drl(d) => Box::new(DrlController::load(&d.checkpoint)?),
    })
}

/// Binary PGM encoding of a frame.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Frame `i` is rendered at the exposure chosen after frame `i - 1`. With
/// `frames_dir` set, every rendered frame is written there as PGM.
pub fn run_eval(
    sequence: &BracketedSequence,
    controller: &mut dyn ExposureController,
    reward: &dyn RewardFunction,
    reward_config: &RewardConfig,
    settings: &EvalSettings,
    frames_dir: Option<&Path>,
) -> Result<Vec<MetricsRow>> {
    controller.reset();
    if let Some(dir) = frames_dir {
        std::fs::create_dir_all(dir)?;
    }
    let limits = AllocLimits::default();
    let frames = settings.max_frames.map_or(sequence.len(), |m| m.min(sequence.len()));
    let mut exposure = clamp_exposure(settings.initial_exposure_us);
    let mut previous: Option<Image> = None;
    let mut rows = Vec::with_capacity(frames);
    for i in 0..frames {
        let bracket = &sequence.frames()[i];
        let frame = render_from_bracket(bracket, exposure, &sequence.response)?;
        let alloc = allocate(exposure, &limits)?;
        if let Some(dir) = frames_dir {
            std::fs::write(dir.join(format!("{i:06}.pgm")), encode_pgm(&frame))?;
        }
        let (n_detect, n_match, step_reward) = match &previous {
            Some(prev) => {
                let ctx = StepContext {
                    current: &frame,
                    previous: prev,
                    gt_relative_pose: sequence.relative_pose(i - 1, i),
                    intrinsics: sequence.intrinsics,
                };
                let (d, m) = if settings.features { feature_counts(&ctx, reward_config) } else { (0, 0) };
                (d, m, reward.evaluate(&ctx)?)
            }
            None => {
                let d = if settings.features { detect_features(&frame, reward_config.max_features).len() } else { 0 };
                (d, 0, 0.0)
            }
        };
        let input = ControlInput { frame: &frame, exposure, bracket: Some(bracket) };
        let (next, flagged) = match controller.next_exposure(&input) {
            Ok(e) => (clamp_exposure(e), false),
            Err(err) => {
                log::warn!("frame {i}: controller {} failed: {err}", controller.name());
                (exposure, true)
            }
        };
        rows.push(MetricsRow {
            frame: i,
            time_us: alloc.time_us,
            gain_db: alloc.gain_db,
            exposure,
            mean_intensity: frame.mean(),
            saturation: frame.saturation_fraction(),
            n_detect,
            n_match,
            reward: step_reward,
            flagged,
        });
        exposure = next;
        previous = Some(frame);
    }
    Ok(rows)
}

/// Writes `metrics.csv`, `summary.json` and `trace.svg` into `dir`.
pub fn write_eval(dir: &Path, controller: &str, rows: &[MetricsRow]) -> Result<EvalSummary> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let summary = EvalSummary::from_rows(controller, rows);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    let trace = Series { name: "mean intensity", points: rows.iter().map(|r| (r.frame as f64, r.mean_intensity)).collect() };
    std::fs::write(dir.join("trace.svg"), line_plot(&format!("{controller} closed loop"), "frame", "mean intensity", &[trace]))?;
    Ok(summary)
}
