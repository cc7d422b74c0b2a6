//! Tanh-squashed Gaussian policy on the EV action range.
//!
//! A pre-squash sample `u ~ N(mean, std)` maps to the action `2·tanh(u)`.
//! Densities include the change-of-variables term of the squashing.

pub const ACTION_SCALE: f64 = 2.0;
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Clamped log std and whether the raw value was inside the clamp.
pub fn clamp_log_std(raw: f64) -> (f64, bool) {
    let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    (clamped, clamped == raw)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh²u)`, stable for large |u|.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log density of the action `2·tanh(u)`, expressed through `u`.
pub fn log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_2PI - log_one_minus_tanh_sq(u) - ACTION_SCALE.ln()
}

pub fn squash(u: f64) -> f64 {
    ACTION_SCALE * u.tanh()
}

/// Pre-squash value of an action strictly inside the range.
pub fn unsquash(action: f64) -> f64 {
    (action / ACTION_SCALE).atanh()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub u: f64,
    pub action: f64,
    pub log_prob: f64,
}

/// Reparameterised sample from standard-normal noise `eps`.
pub fn sample(mean: f64, log_std: f64, eps: f64) -> Sample {
    let u = mean + log_std.exp() * eps;
    Sample { u, action: squash(u), log_prob: log_prob(u, mean, log_std) }
}

/// Gradient of the per-sample actor objective `alpha·log π − Q(a)` with
/// respect to (mean, log std), given `dq_da` at the sampled action.
pub fn actor_objective_grad(s: &Sample, log_std: f64, eps: f64, alpha: f64, dq_da: f64) -> (f64, f64) {
    let t = s.u.tanh();
    let dl_du = alpha * 2.0 * t - dq_da * ACTION_SCALE * (1.0 - t * t);
    (dl_du, -alpha + dl_du * log_std.exp() * eps)
}
