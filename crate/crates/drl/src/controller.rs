//! Trained policy as a closed-loop exposure controller.

use std::collections::VecDeque;
use std::path::Path;

use expolab_core::controllers::{ControlError, ControlInput, ExposureController};
use expolab_core::photometry::apply_ev_delta;
use expolab_core::scene::{area_resize, Observation, OBS_FRAMES, OBS_SIZE};

use crate::checkpoint::load_agent;
use crate::network::{ConvNet, NetSpec};
use crate::policy;
use crate::sac::SacAgent;
use crate::DrlError;

/// Applies the deterministic policy action `2·tanh(mean)` to the last four
/// frames. Until four frames have been seen, the oldest is repeated.
#[derive(Debug, Clone)]
pub struct DrlController {
    actor: ConvNet,
    params: Vec<f32>,
    history: VecDeque<Vec<u8>>,
}

impl DrlController {
    pub fn from_agent(agent: &SacAgent) -> Self {
        Self { actor: agent.nets().actor.clone(), params: agent.params().actor.clone(), history: VecDeque::new() }
    }

    /// Loads a checkpoint whose actor must have the standard 4×84×84 shape.
    pub fn load(path: &Path) -> Result<Self, DrlError> {
        let agent = load_agent(path)?;
        if agent.config().actor != NetSpec::actor() {
            return Err(DrlError::Checkpoint {
                path: path.display().to_string(),
                message: "actor network does not take 4×84×84 observations".into(),
            });
        }
        Ok(Self::from_agent(&agent))
    }

    /// Observation built from the current history, oldest first.
    pub fn observation(&self) -> Option<Observation> {
        let first = self.history.front()?;
        let pad = OBS_FRAMES - self.history.len();
        let planes: Vec<u8> = std::iter::repeat_n(first, pad).chain(self.history.iter()).flatten().copied().collect();
        Observation::from_planes(planes).ok()
    }

    /// Deterministic action for an observation.
    pub fn action(&self, obs: &Observation) -> f64 {
        let out = self.actor.forward(&self.params, &obs.to_f32(), &[], 1);
        policy::squash(f64::from(out[0]))
    }
}

impl ExposureController for DrlController {
    fn name(&self) -> &str {
        "drl"
    }

    fn reset(&mut self) {
        self.history.clear();
    }

    fn next_exposure(&mut self, input: &ControlInput<'_>) -> Result<f64, ControlError> {
        if self.history.len() == OBS_FRAMES {
            self.history.pop_front();
        }
        self.history.push_back(area_resize(input.frame, OBS_SIZE, OBS_SIZE));
        let obs = self.observation().ok_or_else(|| ControlError::Model("empty history".into()))?;
        Ok(apply_ev_delta(input.exposure, self.action(&obs))?)
    }
}
