//! Training driver with periodic deterministic evaluation, and the
//! augmentation ablation built on top of it.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use expolab_core::rewards::{Reward, RewardFunction};
use expolab_core::scene::{EnvConfig, ExposureEnv};
use expolab_drl::{evaluate, EpisodeRecord, SacAgent, Trainer};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{median, median_filter, slope};
use crate::plot::{line_plot, Series};
use crate::sequences::training_sequences;

/// Evaluation episodes use seeds from here upwards, disjoint from the
/// training episode seeds which are hashed from the master seed.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

/// Target band of the mean frame intensity.
pub const INTENSITY_BAND: (f64, f64) = (127.5 - 25.0, 127.5 + 25.0);

/// Deterministic evaluation after `episode` training episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalPoint {
    pub episode: usize,
    pub steps: u64,
    pub mean_reward: f64,
    /// Fraction of evaluation frames whose mean intensity is in band.
    pub in_band_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct CurveRow {
    episode: usize,
    total_reward: f64,
    filtered_reward: f64,
}

pub struct TrainOutcome {
    pub agent: SacAgent,
    pub records: Vec<EpisodeRecord>,
    pub evals: Vec<EvalPoint>,
}

impl TrainOutcome {
    /// Mean episode reward of the first and last `fraction` of training.
    pub fn reward_ends(&self, fraction: f64) -> (f64, f64) {
        let n = self.records.len();
        let k = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
        let mean = |r: &[EpisodeRecord]| r.iter().map(|e| e.total_reward).sum::<f64>() / r.len().max(1) as f64;
        (mean(&self.records[..k.min(n)]), mean(&self.records[n.saturating_sub(k)..]))
    }
}

pub fn eval_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| EVAL_SEED_BASE + k).collect()
}

/// Runs the deterministic policy on `env` and summarises it.
pub fn eval_point(agent: &SacAgent, env: &mut ExposureEnv, seeds: &[u64], episode: usize, steps: u64) -> Result<EvalPoint> {
    let episodes = evaluate(agent, env, seeds)?;
    let frames: Vec<f64> = episodes.iter().flat_map(|e| e.mean_intensity.iter().copied()).collect();
    let in_band = frames.iter().filter(|&&m| m >= INTENSITY_BAND.0 && m <= INTENSITY_BAND.1).count();
    Ok(EvalPoint {
        episode,
        steps,
        mean_reward: episodes.iter().map(|e| e.total_reward()).sum::<f64>() / episodes.len().max(1) as f64,
        in_band_fraction: in_band as f64 / frames.len().max(1) as f64,
    })
}

/// Trains from scratch as configured, evaluating every `train.eval_every`
/// episodes and once at the end.
pub fn run_training(config: &RunConfig, augment: bool, seed: u64, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let reward: Arc<dyn RewardFunction + Send + Sync> =
        Arc::new(Reward::new(config.reward.kind, config.reward.config.clone())?);
    let sequences = training_sequences(config)?;
    let env_config = EnvConfig { augment, ..config.env_config() };
    let mut envs = sequences
        .iter()
        .map(|s| ExposureEnv::new(Arc::clone(s), env_config.clone(), Arc::clone(&reward)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let eval_config = EnvConfig { augment: false, ..config.env_config() };
    let mut eval_env = ExposureEnv::new(Arc::clone(&sequences[0]), eval_config, Arc::clone(&reward))?;
    let seeds = eval_seeds(config.train.eval_episodes);

    let mut trainer = Trainer::new(config.sac.clone(), seed)?;
    let total = config.train.episodes;
    let every = if config.train.eval_every == 0 { total.max(1) } else { config.train.eval_every };
    let mut records = Vec::with_capacity(total);
    let mut evals = Vec::new();
    while trainer.episodes_done() < total {
        let chunk = every.min(total - trainer.episodes_done());
        let recs = trainer.train(&mut envs, chunk, config.train.checkpoint_every, out_dir, |r| {
            log::info!(
                "episode {} steps {} reward {:.3} critic {:.4} actor {:.4} alpha {:.4}",
                r.episode, r.steps, r.total_reward, r.critic_loss, r.actor_loss, r.alpha
            );
        })?;
        records.extend(recs);
        if !seeds.is_empty() {
            let p = eval_point(trainer.agent(), &mut eval_env, &seeds, trainer.episodes_done(), trainer.total_steps())?;
            log::info!("eval after {} episodes: reward {:.3}, in band {:.3}", p.episode, p.mean_reward, p.in_band_fraction);
            evals.push(p);
        }
    }
    if let Some(dir) = out_dir {
        write_curves(dir, &records, &evals, config.train.filter_window)?;
    }
    Ok(TrainOutcome { agent: trainer.into_agent(), records, evals })
}

/// Writes `training_curve.csv` (raw and median-filtered reward),
/// `eval_curve.csv` and `training_curve.svg`.
pub fn write_curves(dir: &Path, records: &[EpisodeRecord], evals: &[EvalPoint], window: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let raw: Vec<f64> = records.iter().map(|r| r.total_reward).collect();
    let filtered = median_filter(&raw, window);
    let mut w = csv::Writer::from_path(dir.join("training_curve.csv"))?;
    for (r, f) in records.iter().zip(&filtered) {
        w.serialize(CurveRow { episode: r.episode, total_reward: r.total_reward, filtered_reward: *f })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("eval_curve.csv"))?;
    for p in evals {
        w.serialize(p)?;
    }
    w.flush()?;
    let ep = |i: usize| records[i].episode as f64;
    let series = [
        Series { name: "episode reward", points: raw.iter().enumerate().map(|(i, &v)| (ep(i), v)).collect() },
        Series { name: "median filtered", points: filtered.iter().enumerate().map(|(i, &v)| (ep(i), v)).collect() },
    ];
    std::fs::write(dir.join("training_curve.svg"), line_plot("training reward", "episode", "reward", &series))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    pub augment: bool,
    /// Least-squares slope of eval reward against episode.
    pub eval_slope: f64,
    pub final_eval_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub median_slope_augmented: f64,
    pub median_slope_plain: f64,
    pub augmented_at_least_plain: bool,
}

/// Trains with and without augmentation for every ablation seed. Each run
/// writes into `out_dir/seed_{s}_{aug|noaug}`.
pub fn run_ablation(config: &RunConfig, out_dir: &Path) -> Result<(Vec<AblationRow>, AblationSummary)> {
    if config.train.ablation_seeds.is_empty() {
        return Err(HarnessError::Invalid("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in &config.train.ablation_seeds {
        for augment in [true, false] {
            let dir = out_dir.join(format!("seed_{seed}_{}", if augment { "aug" } else { "noaug" }));
            let outcome = run_training(config, augment, seed, Some(&dir))?;
            let x: Vec<f64> = outcome.evals.iter().map(|p| p.episode as f64).collect();
            let y: Vec<f64> = outcome.evals.iter().map(|p| p.mean_reward).collect();
            rows.push(AblationRow {
                seed,
                augment,
                eval_slope: slope(&x, &y),
                final_eval_reward: y.last().copied().unwrap_or(f64::NAN),
            });
        }
    }
    let slopes = |aug: bool| rows.iter().filter(|r| r.augment == aug).map(|r| r.eval_slope).collect::<Vec<_>>();
    let (a, p) = (median(&slopes(true)), median(&slopes(false)));
    let summary = AblationSummary { median_slope_augmented: a, median_slope_plain: p, augmented_at_least_plain: a >= p };
    let mut w = csv::Writer::from_path(out_dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(out_dir.join("ablation_summary.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
    Ok((rows, summary))
}
