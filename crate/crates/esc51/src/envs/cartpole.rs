//! Cart-pole balancing with the canonical benchmark constants: gravity 9.8,
//! cart mass 1.0, pole mass 0.1, pole half-length 0.5, force ±10 N, explicit
//! Euler integration at 0.02 s, +1 reward per step, failure when |x| > 2.4 or
//! |θ| > 12°, truncation at 500 steps.

use rand::RngCore;

use super::{gen_range, EnvError, EnvSpec, Environment, StepResult};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const DT: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * std::f64::consts::PI / 180.0;
const MAX_EPISODE_STEPS: u64 = 500;

pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4], // x, x_dot, theta, theta_dot
    steps: u64,
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole".to_string(),
                observation_dim: 4,
                action_count: 2,
                max_episode_steps: MAX_EPISODE_STEPS,
            },
            state: [0.0; 4],
            steps: 0,
        }
    }

    /// Failure is strictly beyond the thresholds; sitting exactly on a
    /// threshold is still alive.
    fn failed(&self) -> bool {
        self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        for s in &mut self.state {
            *s = gen_range(rng, -0.05, 0.05);
        }
        self.steps = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if action >= 2 {
            return Err(EnvError::InvalidAction { action, action_count: 2 });
        }
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let cos_theta = theta.cos();
        let sin_theta = theta.sin();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_theta) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_theta - cos_theta * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_theta * cos_theta / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_theta / TOTAL_MASS;

        // Explicit Euler with the old derivatives, as in the canonical task.
        self.state = [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];
        self.steps += 1;

        let terminated = self.failed();
        let truncated = !terminated && self.steps >= MAX_EPISODE_STEPS;
        Ok(StepResult {
            obs: self.state.to_vec(),
            reward: 1.0,
            terminated,
            truncated,
        })
    }
}
