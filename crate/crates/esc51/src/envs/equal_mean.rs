//! Diagnostic single-state bandit MDP: two arms with equal expected reward
//! (1.0) but different variance. Arm 0 pays 1.0 deterministically; arm 1 pays
//! 0.0 or 2.0 with equal probability. Every episode is one step long, so
//! Q*(s, a) = 1 for both arms under any policy while the return distributions
//! differ sharply in variance.

use rand::RngCore;

use super::{gen_f64, EnvError, EnvSpec, Environment, StepResult};

const OBS: [f64; 1] = [1.0];

pub struct EqualMeanMdp {
    spec: EnvSpec,
}

impl EqualMeanMdp {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "equal-mean".to_string(),
                observation_dim: 1,
                action_count: 2,
                max_episode_steps: 1,
            },
        }
    }

    pub fn start_observation() -> Vec<f64> {
        OBS.to_vec()
    }
}

impl Default for EqualMeanMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for EqualMeanMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        OBS.to_vec()
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        let reward = match action {
            0 => 1.0,
            1 => {
                if gen_f64(rng) < 0.5 {
                    0.0
                } else {
                    2.0
                }
            }
            _ => return Err(EnvError::InvalidAction { action, action_count: 2 }),
        };
        Ok(StepResult {
            obs: OBS.to_vec(),
            reward,
            terminated: true,
            truncated: false,
        })
    }
}
