//! Soft actor-critic: twin critics with target copies, a tanh-squashed
//! Gaussian actor and a learned entropy temperature.
//!
//! The loss and gradient code is generic over the scalar type so the same
//! path can be checked against finite differences in `f64`; the agent
//! itself trains in `f32`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use expolab_core::scene::{Observation, OBS_FRAMES};

use crate::network::{channel_major, ConvNet, NetSpec};
use crate::nn::{Adam, Real};
use crate::policy::{self, clamp_log_std, Sample};
use crate::replay::{Batch, ReplayBuffer};
use crate::DrlError;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub lr: f64,
    pub alpha_lr: f64,
    pub batch: usize,
    pub episode_len: usize,
    pub buffer: usize,
    /// Environment steps taken with uniform random actions before learning.
    pub warmup: usize,
    pub gamma: f64,
    pub tau: f64,
    pub update_period_frames: usize,
    pub updates_per_period: usize,
    pub target_entropy: f64,
    pub initial_alpha: f64,
    /// Tune the temperature toward `target_entropy`; fixed otherwise.
    pub learn_alpha: bool,
    pub actor: NetSpec,
    pub critic: NetSpec,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            alpha_lr: 1e-4,
            batch: 256,
            episode_len: 500,
            buffer: 50_000,
            warmup: 5_000,
            gamma: 0.99,
            tau: 0.005,
            update_period_frames: 50,
            updates_per_period: 50,
            target_entropy: -1.0,
            initial_alpha: 1.0,
            learn_alpha: true,
            actor: NetSpec::actor(),
            critic: NetSpec::critic(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), DrlError> {
        let bad = |m: String| Err(DrlError::Configuration(m));
        for (name, v) in [("lr", self.lr), ("alpha_lr", self.alpha_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("batch", self.batch),
            ("episode_len", self.episode_len),
            ("buffer", self.buffer),
            ("update_period_frames", self.update_period_frames),
            ("updates_per_period", self.updates_per_period),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.batch > self.buffer {
            return bad(format!("batch {} exceeds buffer {}", self.batch, self.buffer));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.initial_alpha >= 0.0 && self.initial_alpha.is_finite()) || (self.learn_alpha && self.initial_alpha == 0.0) {
            return bad(format!("invalid initial_alpha {}", self.initial_alpha));
        }
        if self.actor.outputs != 2 || self.actor.extra_inputs != 0 {
            return bad("actor must take no extra inputs and output (mean, log std)".into());
        }
        if self.critic.outputs != 1 || self.critic.extra_inputs != 1 {
            return bad("critic must take the action as its one extra input and output Q".into());
        }
        if self.actor.in_channels != self.critic.in_channels || self.actor.in_size != self.critic.in_size {
            return bad("actor and critic input shapes differ".into());
        }
        Ok(())
    }
}

/// The two network shapes an agent is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub actor: ConvNet,
    pub critic: ConvNet,
}

impl Nets {
    pub fn new(config: &SacConfig) -> Self {
        Self { actor: ConvNet::new(config.actor.clone()), critic: ConvNet::new(config.critic.clone()) }
    }
}

/// Parameters of the actor, both critics and both target critics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub actor: Vec<T>,
    pub critics: [Vec<T>; 2],
    pub targets: [Vec<T>; 2],
}

impl<T: Real> ParamSet<T> {
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        ParamSet {
            actor: c(&self.actor),
            critics: [c(&self.critics[0]), c(&self.critics[1])],
            targets: [c(&self.targets[0]), c(&self.targets[1])],
        }
    }
}

/// One minibatch in network layout. Observations are `[C][B][H][W]` in
/// [0, 1]; the noise vectors drive the reparameterised samples.
#[derive(Debug, Clone)]
pub struct UpdateInputs<T> {
    pub batch: usize,
    pub obs: Vec<T>,
    pub next_obs: Vec<T>,
    pub actions: Vec<T>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_noise: Vec<f64>,
    pub noise: Vec<f64>,
}

impl<T: Real> UpdateInputs<T> {
    pub fn from_batch(batch: &Batch, rng: &mut impl Rng) -> Self {
        let scale = |bytes: &[u8]| {
            let v: Vec<T> = bytes.iter().map(|&b| T::from_f64(f64::from(b) / 255.0)).collect();
            channel_major(&v, batch.size, OBS_FRAMES)
        };
        let next_noise = (0..batch.size).map(|_| rng.sample(StandardNormal)).collect();
        let noise = (0..batch.size).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            batch: batch.size,
            obs: scale(&batch.obs),
            next_obs: scale(&batch.next_obs),
            actions: batch.actions.iter().map(|&a| T::from_f64(f64::from(a))).collect(),
            rewards: batch.rewards.iter().map(|&r| f64::from(r)).collect(),
            dones: batch.dones.clone(),
            next_noise,
            noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Losses {
    /// Mean of the two critics' squared errors, halved.
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub actor: Vec<T>,
    pub critics: [Vec<T>; 2],
    pub log_alpha: f64,
}

/// Per-sample policy outputs for a batch.
struct PolicyBatch {
    samples: Vec<Sample>,
    log_std: Vec<f64>,
    in_range: Vec<bool>,
}

fn sample_policy<T: Real>(head: &[T], noise: &[f64]) -> PolicyBatch {
    let mut out = PolicyBatch { samples: Vec::new(), log_std: Vec::new(), in_range: Vec::new() };
    for (row, &eps) in head.chunks(2).zip(noise) {
        let (log_std, ok) = clamp_log_std(row[1].as_f64());
        out.samples.push(policy::sample(row[0].as_f64(), log_std, eps));
        out.log_std.push(log_std);
        out.in_range.push(ok);
    }
    out
}

fn actions_of<T: Real>(samples: &[Sample]) -> Vec<T> {
    samples.iter().map(|s| T::from_f64(s.action)).collect()
}

/// Soft Bellman targets `r + γ(1 − done)(min Q̄(s′, a′) − α log π(a′|s′))`.
pub fn critic_targets<T: Real>(
    nets: &Nets,
    params: &ParamSet<T>,
    alpha: f64,
    gamma: f64,
    inputs: &UpdateInputs<T>,
) -> Vec<f64> {
    let b = inputs.batch;
    let head = nets.actor.forward(&params.actor, &inputs.next_obs, &[], b);
    let next = sample_policy(&head, &inputs.next_noise);
    let next_actions: Vec<T> = actions_of(&next.samples);
    let q1 = nets.critic.forward(&params.targets[0], &inputs.next_obs, &next_actions, b);
    let q2 = nets.critic.forward(&params.targets[1], &inputs.next_obs, &next_actions, b);
    (0..b)
        .map(|i| {
            let soft = q1[i].as_f64().min(q2[i].as_f64()) - alpha * next.samples[i].log_prob;
            let cont = if inputs.dones[i] { 0.0 } else { 1.0 };
            inputs.rewards[i] + gamma * cont * soft
        })
        .collect()
}

/// All three losses and their gradients, evaluated at the current
/// parameters. Returns the critic targets as well.
pub fn sac_gradients<T: Real>(
    nets: &Nets,
    params: &ParamSet<T>,
    log_alpha: f64,
    alpha: f64,
    config: &SacConfig,
    inputs: &UpdateInputs<T>,
) -> (Losses, Gradients<T>, Vec<f64>) {
    let b = inputs.batch;
    let inv_b = 1.0 / b as f64;
    let targets = critic_targets(nets, params, alpha, config.gamma, inputs);

    // Critics regress onto the targets. Their trunks on `obs` are reused
    // below to score the actor's fresh actions.
    let mut critic_grads = [vec![T::zero(); nets.critic.param_len()], vec![T::zero(); nets.critic.param_len()]];
    let mut critic_trunks = Vec::with_capacity(2);
    let mut critic_loss = 0.0;
    for k in 0..2 {
        let p = &params.critics[k];
        let trunk = nets.critic.trunk_forward(p, &inputs.obs, b);
        let (q, cache) = nets.critic.head_forward(p, &trunk.features, &inputs.actions, b);
        let mut mse = 0.0;
        let d_q: Vec<T> = (0..b)
            .map(|i| {
                let err = q[i].as_f64() - targets[i];
                mse += err * err * inv_b;
                T::from_f64(2.0 * err * inv_b)
            })
            .collect();
        critic_loss += 0.5 * mse;
        let (d_features, _) = nets.critic.head_backward(p, &cache, &d_q, &mut critic_grads[k]);
        nets.critic.trunk_backward(p, &trunk, &d_features, &mut critic_grads[k]);
        critic_trunks.push(trunk);
    }

    // Actor: minimise α log π(a|s) − min Q(s, a) through the sample.
    let actor_trunk = nets.actor.trunk_forward(&params.actor, &inputs.obs, b);
    let (head, actor_cache) = nets.actor.head_forward(&params.actor, &actor_trunk.features, &[], b);
    let pol = sample_policy(&head, &inputs.noise);
    let new_actions: Vec<T> = actions_of(&pol.samples);
    let mut q_new = Vec::with_capacity(2);
    for k in 0..2 {
        q_new.push(nets.critic.head_forward(&params.critics[k], &critic_trunks[k].features, &new_actions, b));
    }
    let pick_second: Vec<bool> = (0..b).map(|i| q_new[1].0[i] < q_new[0].0[i]).collect();
    let mut dq_da = vec![0.0; b];
    let mut scratch = vec![T::zero(); nets.critic.param_len()];
    for k in 0..2 {
        let seed: Vec<T> = (0..b).map(|i| if pick_second[i] == (k == 1) { T::one() } else { T::zero() }).collect();
        let (_, d_action) = nets.critic.head_backward(&params.critics[k], &q_new[k].1, &seed, &mut scratch);
        for i in 0..b {
            dq_da[i] += d_action[i].as_f64();
        }
    }
    let mut actor_loss = 0.0;
    let mut entropy_gap = 0.0;
    let mut d_head = vec![T::zero(); 2 * b];
    for i in 0..b {
        let s = &pol.samples[i];
        let q_min = q_new[usize::from(pick_second[i])].0[i].as_f64();
        actor_loss += (alpha * s.log_prob - q_min) * inv_b;
        entropy_gap += (s.log_prob + config.target_entropy) * inv_b;
        let (d_mean, d_log_std) = policy::actor_objective_grad(s, pol.log_std[i], inputs.noise[i], alpha, dq_da[i]);
        d_head[2 * i] = T::from_f64(d_mean * inv_b);
        d_head[2 * i + 1] = T::from_f64(if pol.in_range[i] { d_log_std * inv_b } else { 0.0 });
    }
    let mut actor_grad = vec![T::zero(); nets.actor.param_len()];
    let (d_features, _) = nets.actor.head_backward(&params.actor, &actor_cache, &d_head, &mut actor_grad);
    nets.actor.trunk_backward(&params.actor, &actor_trunk, &d_features, &mut actor_grad);

    let losses = Losses { critic: critic_loss, actor: actor_loss, alpha: -log_alpha * entropy_gap };
    let grads = Gradients { actor: actor_grad, critics: critic_grads, log_alpha: -entropy_gap };
    (losses, grads, targets)
}

/// `target ← τ·online + (1 − τ)·target`, elementwise.
pub fn polyak<T: Real>(target: &mut [T], online: &[T], tau: T) {
    assert_eq!(target.len(), online.len());
    let keep = T::one() - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + keep * *t;
    }
}

/// Optimiser state of every trained quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub actor: Adam,
    pub critics: [Adam; 2],
    pub log_alpha: Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub(crate) config: SacConfig,
    pub(crate) nets: Nets,
    pub(crate) params: ParamSet<f32>,
    pub(crate) log_alpha: f32,
    pub(crate) optim: Optimizers,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) updates: u64,
}

impl SacAgent {
    /// Fresh agent; target critics start as exact copies of the critics.
    pub fn new(config: SacConfig, seed: u64) -> Result<Self, DrlError> {
        config.validate()?;
        let nets = Nets::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = nets.actor.init(&mut rng);
        let critics = [nets.critic.init(&mut rng), nets.critic.init(&mut rng)];
        let targets = critics.clone();
        let optim = Optimizers {
            actor: Adam::new(actor.len(), config.lr),
            critics: [Adam::new(critics[0].len(), config.lr), Adam::new(critics[1].len(), config.lr)],
            log_alpha: Adam::new(1, config.alpha_lr),
        };
        let log_alpha = if config.initial_alpha > 0.0 { config.initial_alpha.ln() as f32 } else { f32::NEG_INFINITY };
        Ok(Self { config, nets, params: ParamSet { actor, critics, targets }, log_alpha, optim, rng, updates: 0 })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn optimizers(&self) -> &Optimizers {
        &self.optim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn log_alpha(&self) -> f64 {
        f64::from(self.log_alpha)
    }

    /// Entropy temperature currently in use.
    pub fn alpha(&self) -> f64 {
        if self.config.learn_alpha {
            f64::from(self.log_alpha).exp()
        } else {
            self.config.initial_alpha
        }
    }

    fn actor_head(&self, obs: &Observation) -> (f64, f64) {
        let out = self.nets.actor.forward(&self.params.actor, &obs.to_f32(), &[], 1);
        (f64::from(out[0]), clamp_log_std(f64::from(out[1])).0)
    }

    /// Pre-squash mean and clamped log std for one observation.
    pub fn policy_head(&self, obs: &Observation) -> (f64, f64) {
        self.actor_head(obs)
    }

    /// Stochastic action and its log density, drawn from the agent's RNG.
    pub fn sample_action(&mut self, obs: &Observation) -> Sample {
        let (mean, log_std) = self.actor_head(obs);
        let eps: f64 = self.rng.sample(StandardNormal);
        policy::sample(mean, log_std, eps)
    }

    /// The squashed policy mean, used at evaluation time.
    pub fn deterministic_action(&self, obs: &Observation) -> f64 {
        policy::squash(self.actor_head(obs).0)
    }

    /// Uniform action over the full range, for warm-up.
    pub fn random_action(&mut self) -> f64 {
        self.rng.random_range(-policy::ACTION_SCALE..policy::ACTION_SCALE)
    }

    /// Q values of both online critics.
    pub fn critic_values(&self, obs: &Observation, action: f64) -> [f64; 2] {
        let x = obs.to_f32();
        let a = [action as f32];
        let q = |p: &[f32]| f64::from(self.nets.critic.forward(p, &x, &a, 1)[0]);
        [q(&self.params.critics[0]), q(&self.params.critics[1])]
    }

    /// One gradient step on all losses followed by a target update.
    pub fn update(&mut self, batch: &Batch) -> Losses {
        let inputs = UpdateInputs::<f32>::from_batch(batch, &mut self.rng);
        let alpha = self.alpha();
        let (losses, grads, _) = sac_gradients(&self.nets, &self.params, f64::from(self.log_alpha), alpha, &self.config, &inputs);
        self.optim.actor.step(&mut self.params.actor, &grads.actor);
        for k in 0..2 {
            self.optim.critics[k].step(&mut self.params.critics[k], &grads.critics[k]);
        }
        if self.config.learn_alpha {
            let mut la = [self.log_alpha];
            self.optim.log_alpha.step(&mut la, &[grads.log_alpha as f32]);
            self.log_alpha = la[0];
        }
        self.polyak();
        self.updates += 1;
        losses
    }

    /// Samples a configured-size batch and updates on it.
    pub fn update_from(&mut self, replay: &ReplayBuffer) -> Result<Losses, DrlError> {
        let batch = replay.sample(&mut self.rng, self.config.batch)?;
        Ok(self.update(&batch))
    }

    pub fn polyak(&mut self) {
        let tau = self.config.tau as f32;
        for k in 0..2 {
            polyak(&mut self.params.targets[k], &self.params.critics[k], tau);
        }
    }
}
