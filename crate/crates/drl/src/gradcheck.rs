//! Finite-difference checks of every hand-written backward pass.
//!
//! Each check builds a small random instance in `f64`, projects the layer
//! output onto fixed random weights to get a scalar, and compares the
//! analytic gradient with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::network::{ConvNet, NetSpec};
use crate::nn::{Conv2d, Linear};
use crate::policy;
use crate::sac::{sac_gradients, Nets, ParamSet, SacConfig, UpdateInputs};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Relative error with a floor so exact zeros compare sensibly.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` with central differences of `f` around `x`.
fn compare(name: &str, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> GradReport {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    GradReport { name: name.into(), checked: x.len(), max_rel_error: worst }
}

fn f64_params(init: Vec<f32>) -> Vec<f64> {
    init.into_iter().map(f64::from).collect()
}

pub fn check_linear(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Linear { inputs: 7, outputs: 5 };
    let batch = 3;
    let params = gaussian(&mut rng, layer.param_len(), 0.5);
    let x = gaussian(&mut rng, layer.inputs * batch, 1.0);
    let w = gaussian(&mut rng, layer.outputs * batch, 1.0);
    let mut grads = vec![0.0; params.len()];
    let dx = layer.backward(&params, &x, &w, &mut grads, batch);
    vec![
        compare("linear/params", &params, &grads, |p| dot(&layer.forward(p, &x, batch), &w)),
        compare("linear/input", &x, &dx, |xi| dot(&layer.forward(&params, xi, batch), &w)),
    ]
}

pub fn check_conv(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Conv2d { in_channels: 3, out_channels: 4, kernel: 3, stride: 2, in_size: 9 };
    let batch = 2;
    let params = gaussian(&mut rng, layer.param_len(), 0.3);
    let input = gaussian(&mut rng, layer.in_channels * batch * 81, 1.0);
    let out_len = layer.out_channels * batch * layer.out_size() * layer.out_size();
    let w = gaussian(&mut rng, out_len, 1.0);
    let (out, cols) = layer.forward(&params, &input, batch);
    let mut grads = vec![0.0; params.len()];
    let d_in = layer.backward(&params, &cols, &out, w.clone(), &mut grads, batch, true).expect("input gradient");
    vec![
        compare("conv/params", &params, &grads, |p| dot(&layer.forward(p, &input, batch).0, &w)),
        compare("conv/input", &input, &d_in, |x| dot(&layer.forward(&params, x, batch).0, &w)),
    ]
}

/// Whole network, trunk and head, including the gradient with respect to
/// the extra (action) input.
pub fn check_network(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = ConvNet::new(NetSpec::miniature_critic());
    let batch = 2;
    let params = f64_params(net.init(&mut rng));
    let input: Vec<f64> = (0..net.input_len() * batch).map(|_| rng.random::<f64>()).collect();
    let extra = gaussian(&mut rng, batch, 1.0);
    let w = gaussian(&mut rng, batch, 1.0);
    let trunk = net.trunk_forward(&params, &input, batch);
    let (_, cache) = net.head_forward(&params, &trunk.features, &extra, batch);
    let mut grads = vec![0.0; params.len()];
    let (d_features, d_extra) = net.head_backward(&params, &cache, &w, &mut grads);
    net.trunk_backward(&params, &trunk, &d_features, &mut grads);
    vec![
        compare("network/params", &params, &grads, |p| dot(&net.forward(p, &input, &extra, batch), &w)),
        compare("network/extra", &extra, &d_extra, |e| dot(&net.forward(&params, &input, e, batch), &w)),
    ]
}

/// Log density of the squashed Gaussian with respect to mean and log std.
pub fn check_policy(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.5..0.5)];
    let eps: f64 = rng.sample(StandardNormal);
    let (alpha, slope) = (0.4, 0.8);
    // Objective alpha·log π − slope·a has dQ/da = slope.
    let objective = |x: &[f64]| {
        let s = policy::sample(x[0], x[1], eps);
        alpha * s.log_prob - slope * s.action
    };
    let s = policy::sample(x[0], x[1], eps);
    let (dm, dl) = policy::actor_objective_grad(&s, x[1], eps, alpha, slope);
    vec![compare("policy/objective", &x, &[dm, dl], objective)]
}

/// The three SAC losses on miniature networks.
pub fn check_sac(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = SacConfig {
        actor: NetSpec::miniature_actor(),
        critic: NetSpec::miniature_critic(),
        ..SacConfig::default()
    };
    let nets = Nets::new(&config);
    let critics = [f64_params(nets.critic.init(&mut rng)), f64_params(nets.critic.init(&mut rng))];
    let mut params = ParamSet {
        actor: f64_params(nets.actor.init(&mut rng)),
        targets: [f64_params(nets.critic.init(&mut rng)), f64_params(nets.critic.init(&mut rng))],
        critics,
    };
    // A larger head scale keeps the min-critic choice away from ties.
    for v in params.critics.iter_mut().flatten() {
        *v *= 3.0;
    }
    let batch = 3;
    let input_len = nets.actor.input_len() * batch;
    let inputs = UpdateInputs {
        batch,
        obs: (0..input_len).map(|_| rng.random::<f64>()).collect(),
        next_obs: (0..input_len).map(|_| rng.random::<f64>()).collect(),
        actions: (0..batch).map(|_| rng.random_range(-1.9..1.9)).collect(),
        rewards: gaussian(&mut rng, batch, 1.0),
        dones: vec![false, true, false],
        next_noise: gaussian(&mut rng, batch, 1.0),
        noise: gaussian(&mut rng, batch, 1.0),
    };
    let (log_alpha, alpha) = (-0.3f64, (-0.3f64).exp());
    let (_, grads, _) = sac_gradients(&nets, &params, log_alpha, alpha, &config, &inputs);

    let mut reports = Vec::new();
    for k in 0..2 {
        let x = params.critics[k].clone();
        let mut p = params.clone();
        reports.push(compare(&format!("sac/critic{}", k + 1), &x, &grads.critics[k], |c| {
            p.critics[k].copy_from_slice(c);
            // Each critic's gradient is that of its own squared error; the
            // reported loss halves their sum, so scale back up.
            2.0 * sac_gradients(&nets, &p, log_alpha, alpha, &config, &inputs).0.critic
        }));
    }
    let x = params.actor.clone();
    let mut p = params.clone();
    reports.push(compare("sac/actor", &x, &grads.actor, |a| {
        p.actor.copy_from_slice(a);
        sac_gradients(&nets, &p, log_alpha, alpha, &config, &inputs).0.actor
    }));
    params.actor = x;
    reports.push(compare("sac/log_alpha", &[log_alpha], &[grads.log_alpha], |la| {
        sac_gradients(&nets, &params, la[0], la[0].exp(), &config, &inputs).0.alpha
    }));
    reports
}

/// Every check above.
pub fn check_all(seed: u64) -> Vec<GradReport> {
    [check_linear, check_conv, check_network, check_policy, check_sac]
        .iter()
        .flat_map(|f| f(seed))
        .collect()
}
