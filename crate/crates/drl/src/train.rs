//! Off-policy training loop, evaluation rollouts and resumable state.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use expolab_core::scene::ExposureEnv;

use crate::checkpoint::{load_agent, save_agent};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{SacAgent, SacConfig};
use crate::DrlError;

pub const LOG_HEADER: [&str; 6] = ["episode", "steps", "total_reward", "critic_loss", "actor_loss", "alpha"];

/// One row of the training log. Losses are NaN for episodes without
/// gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Environment steps taken since training began.
    pub steps: u64,
    pub total_reward: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub episodes: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { episodes: 0, checkpoint_every: 1000, seed: 0 }
    }
}

/// Seed of the environment reset for `episode` under `master`.
pub fn episode_seed(master: u64, episode: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(episode as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    seed: u64,
    episodes_done: usize,
    total_steps: u64,
}

pub struct Trainer {
    agent: SacAgent,
    replay: ReplayBuffer,
    seed: u64,
    episodes_done: usize,
    total_steps: u64,
}

impl Trainer {
    pub fn new(config: SacConfig, seed: u64) -> Result<Self, DrlError> {
        let replay = ReplayBuffer::new(config.buffer);
        let agent = SacAgent::new(config, seed)?;
        Ok(Self { agent, replay, seed, episodes_done: 0, total_steps: 0 })
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn into_agent(self) -> SacAgent {
        self.agent
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Plays one episode, learning along the way.
    pub fn run_episode(&mut self, env: &mut ExposureEnv) -> Result<EpisodeRecord, DrlError> {
        let episode = self.episodes_done;
        let cfg = self.agent.config().clone();
        let mut obs = env.reset(episode_seed(self.seed, episode))?;
        let mut total_reward = 0.0;
        let (mut critic_sum, mut actor_sum, mut n_updates) = (0.0, 0.0, 0usize);
        loop {
            let action = if self.total_steps < cfg.warmup as u64 {
                self.agent.random_action()
            } else {
                self.agent.sample_action(&obs).action
            };
            let out = env.step(action)?;
            total_reward += out.reward;
            // Every termination is a time or sequence limit, never a true
            // terminal state, so bootstrapping continues through it.
            self.replay.push(&Transition {
                obs,
                action: action as f32,
                reward: out.reward as f32,
                next_obs: out.observation.clone(),
                done: false,
            });
            obs = out.observation;
            self.total_steps += 1;
            let learning = self.total_steps >= cfg.warmup as u64 && self.replay.len() >= cfg.batch;
            if learning && self.total_steps.is_multiple_of(cfg.update_period_frames as u64) {
                for _ in 0..cfg.updates_per_period {
                    let losses = self.agent.update_from(&self.replay)?;
                    critic_sum += losses.critic;
                    actor_sum += losses.actor;
                    n_updates += 1;
                }
            }
            if out.done {
                break;
            }
        }
        self.episodes_done += 1;
        let mean = |s: f64| if n_updates > 0 { s / n_updates as f64 } else { f64::NAN };
        Ok(EpisodeRecord {
            episode,
            steps: self.total_steps,
            total_reward,
            critic_loss: mean(critic_sum),
            actor_loss: mean(actor_sum),
            alpha: self.agent.alpha(),
        })
    }

    /// Runs `episodes` more episodes, cycling through `envs`. With an
    /// output directory, log rows are flushed as they complete, a snapshot
    /// is written every `checkpoint_every` episodes and the final agent is
    /// saved as `agent.ckpt`.
    pub fn train(
        &mut self,
        envs: &mut [ExposureEnv],
        episodes: usize,
        checkpoint_every: usize,
        out_dir: Option<&Path>,
        mut on_episode: impl FnMut(&EpisodeRecord),
    ) -> Result<Vec<EpisodeRecord>, DrlError> {
        if envs.is_empty() {
            return Err(DrlError::Configuration("no training environments".into()));
        }
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(TrainLog::append_or_create(&dir.join("train_log.csv"))?)
            }
            None => None,
        };
        let mut records = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let env = &mut envs[self.episodes_done % envs.len()];
            let rec = self.run_episode(env)?;
            if let Some(log) = log.as_mut() {
                log.write(&rec)?;
            }
            on_episode(&rec);
            records.push(rec);
            if let Some(dir) = out_dir {
                if checkpoint_every > 0 && self.episodes_done.is_multiple_of(checkpoint_every) {
                    self.save(&snapshot_dir(dir, self.episodes_done))?;
                }
            }
        }
        if let (Some(dir), false) = (out_dir, records.is_empty()) {
            save_agent(&self.agent, &dir.join("agent.ckpt"))?;
        }
        Ok(records)
    }

    /// Writes everything needed to resume: agent, replay and counters.
    pub fn save(&self, dir: &Path) -> Result<(), DrlError> {
        fs::create_dir_all(dir)?;
        save_agent(&self.agent, &dir.join("agent.ckpt"))?;
        let mut w = BufWriter::new(File::create(dir.join("replay.bin"))?);
        self.replay.write_to(&mut w)?;
        w.flush()?;
        let state = TrainerState { seed: self.seed, episodes_done: self.episodes_done, total_steps: self.total_steps };
        let json = serde_json::to_string_pretty(&state).map_err(|e| DrlError::Configuration(e.to_string()))?;
        fs::write(dir.join("trainer.json"), json)?;
        Ok(())
    }

    pub fn resume(dir: &Path) -> Result<Self, DrlError> {
        let agent = load_agent(&dir.join("agent.ckpt"))?;
        let state_path = dir.join("trainer.json");
        let text = fs::read_to_string(&state_path)
            .map_err(|e| DrlError::Checkpoint { path: state_path.display().to_string(), message: e.to_string() })?;
        let state: TrainerState = serde_json::from_str(&text)
            .map_err(|e| DrlError::Checkpoint { path: state_path.display().to_string(), message: e.to_string() })?;
        let replay_path = dir.join("replay.bin");
        let mut r = BufReader::new(File::open(&replay_path)?);
        let replay = ReplayBuffer::read_from(&mut r)
            .map_err(|e| DrlError::Checkpoint { path: replay_path.display().to_string(), message: e.to_string() })?;
        if replay.capacity() != agent.config().buffer {
            return Err(DrlError::Checkpoint {
                path: replay_path.display().to_string(),
                message: format!("capacity {} does not match configured buffer {}", replay.capacity(), agent.config().buffer),
            });
        }
        Ok(Self { agent, replay, seed: state.seed, episodes_done: state.episodes_done, total_steps: state.total_steps })
    }
}

pub fn snapshot_dir(out_dir: &Path, episodes_done: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("episode_{episodes_done:06}"))
}

/// CSV training log with a fixed header, flushed after every row.
pub struct TrainLog {
    writer: csv::Writer<File>,
}

impl TrainLog {
    pub fn append_or_create(path: &Path) -> Result<Self, DrlError> {
        let exists = path.exists() && fs::metadata(path)?.len() > 0;
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            writer.write_record(LOG_HEADER).map_err(csv_err)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    pub fn write(&mut self, r: &EpisodeRecord) -> Result<(), DrlError> {
        self.writer
            .write_record([
                r.episode.to_string(),
                r.steps.to_string(),
                r.total_reward.to_string(),
                r.critic_loss.to_string(),
                r.actor_loss.to_string(),
                r.alpha.to_string(),
            ])
            .map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> DrlError {
    DrlError::Io(std::io::Error::other(e))
}

/// Per-frame results of one deterministic evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub rewards: Vec<f64>,
    pub mean_intensity: Vec<f64>,
    pub exposures: Vec<f64>,
}

impl EvalEpisode {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Rolls out the deterministic policy once per seed.
pub fn evaluate(agent: &SacAgent, env: &mut ExposureEnv, seeds: &[u64]) -> Result<Vec<EvalEpisode>, DrlError> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut obs = env.reset(seed)?;
        let mut ep = EvalEpisode { rewards: Vec::new(), mean_intensity: Vec::new(), exposures: Vec::new() };
        loop {
            let step = env.step(agent.deterministic_action(&obs))?;
            ep.rewards.push(step.reward);
            ep.mean_intensity.push(step.frame.mean());
            ep.exposures.push(env.current_exposure().expect("episode running"));
            obs = step.observation;
            if step.done {
                break;
            }
        }
        out.push(ep);
    }
    Ok(out)
}
