//! Subcommand implementations and run manifests.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use expolab_core::photometry::{aligned_rmse, calibrate_crf, observed_levels, CalibrationOptions};
use expolab_core::rewards::Reward;
use expolab_core::scene::io::save_sequence;
use expolab_core::scene::SceneSpec;

use crate::config::{missing, ControllerConfig, RunConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{build_controller, run_eval, write_eval, METRICS_VERSION};
use crate::react::{react_scene, run_react_test, write_react};
use crate::sequences::{eval_sequence, generated_sequence};
use crate::train::{run_ablation, run_training};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CalibrateCrf,
    GenScene,
    Train,
    Eval,
    ReactTest,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::CalibrateCrf => "calibrate-crf",
            Command::GenScene => "gen-scene",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::ReactTest => "react-test",
        })
    }
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: Command,
    pub version: String,
    pub metrics_version: u32,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: Command, config: &RunConfig) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION").into(),
            metrics_version: METRICS_VERSION,
            seed: config.seed,
            config: config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HarnessError::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Config {
            path: path.display().to_string(),
            key: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

/// Runs `command`, writing its manifest first.
pub fn run(command: Command, config: &RunConfig) -> Result<()> {
    config.check_paths()?;
    let out = config.output_dir()?;
    Manifest::new(command, config).write(out)?;
    match command {
        Command::CalibrateCrf => calibrate(config, out),
        Command::GenScene => gen_scene(config, out),
        Command::Train => train(config, out),
        Command::Eval => eval(config, out),
        Command::ReactTest => react(config, out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializes") + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct CalibrationSummary {
    stacks: usize,
    images_per_stack: usize,
    observed_levels: usize,
    /// Against the response stored with the sequence, over the observed
    /// levels.
    aligned_rmse: f64,
}

fn calibrate(config: &RunConfig, out: &Path) -> Result<()> {
    let sequence = eval_sequence(config)?;
    let n = config.calibration.frames.clamp(1, sequence.len());
    let stacks: Vec<_> = sequence.frames()[..n].iter().map(|f| f.images().to_vec()).collect();
    let options = CalibrationOptions {
        sample_sites: config.calibration.sample_sites,
        smoothness: config.calibration.smoothness,
        seed: config.seed,
    };
    let response = calibrate_crf(&stacks, &options)?;
    response.save(&out.join("crf.txt"))?;
    let levels = observed_levels(&stacks);
    let summary = CalibrationSummary {
        stacks: n,
        images_per_stack: stacks[0].len(),
        observed_levels: levels.len(),
        aligned_rmse: aligned_rmse(&response, &sequence.response, &levels),
    };
    log::info!("calibrated from {n} brackets, aligned RMSE {:.4}", summary.aligned_rmse);
    write_json(&out.join("calibration.json"), &summary)
}

fn gen_scene(config: &RunConfig, out: &Path) -> Result<()> {
    if config.scene.is_none() {
        return Err(missing("scene"));
    }
    let sequence = generated_sequence(config)?;
    save_sequence(&sequence, out)?;
    log::info!("wrote {} frames to {}", sequence.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    episodes: usize,
    steps: u64,
    first_tenth_reward: f64,
    last_tenth_reward: f64,
    final_eval_reward: Option<f64>,
    final_in_band_fraction: Option<f64>,
}

fn train(config: &RunConfig, out: &Path) -> Result<()> {
    if config.train.ablation {
        let (_, summary) = run_ablation(config, out)?;
        log::info!(
            "median eval slope: augmented {:.5}, plain {:.5}",
            summary.median_slope_augmented, summary.median_slope_plain
        );
        return Ok(());
    }
    let outcome = run_training(config, config.env.augment, config.seed, Some(out))?;
    let (first, last) = outcome.reward_ends(0.1);
    let last_eval = outcome.evals.last();
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            episodes: outcome.records.len(),
            steps: outcome.records.last().map_or(0, |r| r.steps),
            first_tenth_reward: first,
            last_tenth_reward: last,
            final_eval_reward: last_eval.map(|p| p.mean_reward),
            final_in_band_fraction: last_eval.map(|p| p.in_band_fraction),
        },
    )
}

/// Output subdirectory names, made unique by index where labels repeat.
fn controller_dirs(controllers: &[ControllerConfig]) -> Vec<String> {
    controllers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let repeated = controllers.iter().filter(|o| o.label() == c.label()).count() > 1;
            if repeated { format!("{}_{i}", c.label()) } else { c.label().to_string() }
        })
        .collect()
}

fn eval(config: &RunConfig, out: &Path) -> Result<()> {
    if config.controllers.is_empty() {
        return Err(missing("controllers"));
    }
    let sequence = eval_sequence(config)?;
    let reward = Reward::new(config.reward.kind, config.reward.config.clone())?;
    for (c, name) in config.controllers.iter().zip(controller_dirs(&config.controllers)) {
        let mut controller = build_controller(c, &sequence.response)?;
        let dir = out.join(&name);
        let frames_dir = config.eval.save_frames.then(|| dir.join("frames"));
        let rows = run_eval(&sequence, controller.as_mut(), &reward, &reward.config, &config.eval, frames_dir.as_deref())?;
        let s = write_eval(&dir, &name, &rows)?;
        log::info!(
            "{name}: mean N_match {:.1}, min {}, reward {:.3}, saturated {:.3}",
            s.mean_n_match, s.min_n_match, s.total_reward, s.saturation_time_fraction
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ReactSummaryRow {
    controller: String,
    median_recovery_frames: f64,
}

fn react(config: &RunConfig, out: &Path) -> Result<()> {
    let spec = config.scene.as_ref().map_or_else(|| SceneSpec::react(config.react.frames), |s| s.spec());
    let response = config.response()?;
    let scenes = config
        .react
        .seeds
        .iter()
        .map(|&s| Ok((s, react_scene(s, &spec, &response)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut controllers = config
        .controllers
        .iter()
        .map(|c| build_controller(c, &response))
        .collect::<Result<Vec<_>>>()?;
    let report = run_react_test(&scenes, &spec, &mut controllers, &config.react)?;
    write_react(out, &report)?;
    let mut summary = Vec::new();
    for c in &controllers {
        let m = report.median_recovery(c.name()).unwrap_or(f64::NAN);
        log::info!("{}: median recovery {m} frames", c.name());
        summary.push(ReactSummaryRow { controller: c.name().into(), median_recovery_frames: m });
    }
    write_json(&out.join("react_summary.json"), &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_controller_labels_get_indices() {
        let cs: Vec<ControllerConfig> = serde_json::from_str(r#"[{"kind":"builtin"},{"kind":"gradient"},{"kind":"builtin"}]"#).unwrap();
        assert_eq!(controller_dirs(&cs), ["builtin_0", "gradient", "builtin_2"]);
    }
}
