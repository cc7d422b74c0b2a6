//! Reaction-speed test: light off, then back on, with each controller in
//! closed loop on a static scene.

use std::path::Path;

use serde::Serialize;

use expolab_core::controllers::{run_closed_loop, ExposureController};
use expolab_core::photometry::CameraResponse;
use expolab_core::scene::{generate_sequence, BracketedSequence, Intrinsics, SceneSpec};

use crate::config::ReactSettings;
use crate::error::{HarnessError, Result};
use crate::metrics::{median, recovery_frames, Recovery, RecoveryCriterion};
use crate::plot::{line_plot, Series};

/// Recovery of one controller after one light event.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRecord {
    pub seed: u64,
    pub controller: String,
    pub event_frame: usize,
    pub scale: f64,
    pub recovery: Recovery,
}

#[derive(Serialize)]
struct RecoveryCsvRow<'a> {
    seed: u64,
    controller: &'a str,
    event_frame: usize,
    scale: f64,
    recovery_frames: usize,
    censored: bool,
    label: String,
}

#[derive(Serialize)]
struct TraceCsvRow<'a> {
    seed: u64,
    controller: &'a str,
    frame: usize,
    exposure: f64,
    mean_intensity: f64,
    saturation: f64,
}

/// Mean intensity trace of one controller on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub controller: String,
    pub exposure: Vec<f64>,
    pub mean_intensity: Vec<f64>,
    pub saturation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReactReport {
    pub recoveries: Vec<RecoveryRecord>,
    pub traces: Vec<Trace>,
}

impl ReactReport {
    /// Median recovery over every seed and event of `controller`, counting
    /// censored runs at their censoring value.
    pub fn median_recovery(&self, controller: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .recoveries
            .iter()
            .filter(|r| r.controller == controller)
            .map(|r| r.recovery.frames as f64)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    /// Per-seed medians over events, then the median over seeds.
    pub fn median_of_seed_medians(&self, controller: &str) -> Option<f64> {
        let mut seeds: Vec<u64> = self.recoveries.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let per_seed: Vec<f64> = seeds
            .iter()
            .filter_map(|&s| {
                let v: Vec<f64> = self
                    .recoveries
                    .iter()
                    .filter(|r| r.seed == s && r.controller == controller)
                    .map(|r| r.recovery.frames as f64)
                    .collect();
                (!v.is_empty()).then(|| median(&v))
            })
            .collect();
        (!per_seed.is_empty()).then(|| median(&per_seed))
    }
}

impl ReactSettings {
    pub fn criterion(&self) -> RecoveryCriterion {
        RecoveryCriterion {
            steady_window: self.steady_window,
            tolerance: self.tolerance,
            hold_frames: self.hold_frames,
            censor_at: self.censor_at,
        }
    }
}

/// The react scene of one seed.
pub fn react_scene(seed: u64, spec: &SceneSpec, response: &CameraResponse) -> Result<BracketedSequence> {
    Ok(generate_sequence(seed, spec, response, &Intrinsics::synthetic())?)
}

/// Runs every controller on every scene and measures recovery after each
/// light event of `spec`.
pub fn run_react_test(
    scenes: &[(u64, BracketedSequence)],
    spec: &SceneSpec,
    controllers: &mut [Box<dyn ExposureController>],
    settings: &ReactSettings,
) -> Result<ReactReport> {
    if controllers.len() < 2 {
        return Err(HarnessError::Invalid(format!("react-test needs at least 2 controllers, got {}", controllers.len())));
    }
    if spec.light_events.is_empty() {
        return Err(HarnessError::Invalid("react-test scene has no light events".into()));
    }
    let criterion = settings.criterion();
    let mut report = ReactReport::default();
    for (seed, sequence) in scenes {
        for controller in controllers.iter_mut() {
            let name = controller.name().to_string();
            let records = run_closed_loop(sequence, controller.as_mut(), settings.initial_exposure_us, |_, _| {})?;
            let intensity: Vec<f64> = records.iter().map(|r| r.mean_intensity).collect();
            for event in &spec.light_events {
                report.recoveries.push(RecoveryRecord {
                    seed: *seed,
                    controller: name.clone(),
                    event_frame: event.frame,
                    scale: event.scale,
                    recovery: recovery_frames(&intensity, event.frame, &criterion),
                });
            }
            report.traces.push(Trace {
                seed: *seed,
                controller: name,
                exposure: records.iter().map(|r| r.exposure).collect(),
                mean_intensity: intensity,
                saturation: records.iter().map(|r| r.saturation).collect(),
            });
        }
    }
    Ok(report)
}

/// Writes `recovery.csv`, `traces.csv` and `trace.svg` (first seed).
pub fn write_react(dir: &Path, report: &ReactReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("recovery.csv"))?;
    for r in &report.recoveries {
        w.serialize(RecoveryCsvRow {
            seed: r.seed,
            controller: &r.controller,
            event_frame: r.event_frame,
            scale: r.scale,
            recovery_frames: r.recovery.frames,
            censored: r.recovery.censored,
            label: r.recovery.label(),
        })?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("traces.csv"))?;
    for t in &report.traces {
        for i in 0..t.mean_intensity.len() {
            w.serialize(TraceCsvRow {
                seed: t.seed,
                controller: &t.controller,
                frame: i,
                exposure: t.exposure[i],
                mean_intensity: t.mean_intensity[i],
                saturation: t.saturation[i],
            })?;
        }
    }
    w.flush()?;

    if let Some(first) = report.traces.first().map(|t| t.seed) {
        let series: Vec<Series<'_>> = report
            .traces
            .iter()
            .filter(|t| t.seed == first)
            .map(|t| Series {
                name: &t.controller,
                points: t.mean_intensity.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
            })
            .collect();
        let svg = line_plot(&format!("light switch, scene seed {first}"), "frame", "mean intensity", &series);
        std::fs::write(dir.join("trace.svg"), svg)?;
    }
    Ok(())
}
