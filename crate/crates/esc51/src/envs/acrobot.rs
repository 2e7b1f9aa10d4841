//! Two-link underactuated pendulum swing-up with the canonical benchmark
//! constants: unit masses and lengths, torque in {−1, 0, +1} on the second
//! joint, fourth-order Runge-Kutta integration at dt = 0.2, reward −1 per
//! step until the tip clears −cos θ₁ − cos(θ₁+θ₂) > 1, truncation at 500
//! steps, six-dimensional trigonometric observation.

use std::f64::consts::PI;

use rand::RngCore;

use super::{gen_range, EnvError, EnvSpec, Environment, StepResult};

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
const MAX_EPISODE_STEPS: u64 = 500;

pub struct Acrobot {
    spec: EnvSpec,
    state: [f64; 4], // theta1, theta2, dtheta1, dtheta2
    steps: u64,
}

impl Acrobot {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "acrobot".to_string(),
                observation_dim: 6,
                action_count: 3,
                max_episode_steps: MAX_EPISODE_STEPS,
            },
            state: [0.0; 4],
            steps: 0,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    fn observation(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }

    fn solved(&self) -> bool {
        -self.state[0].cos() - (self.state[0] + self.state[1]).cos() > 1.0
    }
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

/// Equations of motion for the state extended with the applied torque.
fn dynamics(s: &[f64; 5]) -> [f64; 5] {
    let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
    let l1 = LINK_LENGTH_1;
    let (lc1, lc2) = (LINK_COM_1, LINK_COM_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let g = GRAVITY;
    let [theta1, theta2, dtheta1, dtheta2, torque] = *s;

    let d1 = m1 * lc1 * lc1
        + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos())
        + i1
        + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1
        - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin()
        - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0]
}

/// One classic fourth-order Runge-Kutta step of size `dt`.
fn rk4_step(y: &[f64; 5], dt: f64) -> [f64; 5] {
    let k1 = dynamics(y);
    let k2 = dynamics(&add_scaled(y, &k1, dt / 2.0));
    let k3 = dynamics(&add_scaled(y, &k2, dt / 2.0));
    let k4 = dynamics(&add_scaled(y, &k3, dt));
    let mut out = *y;
    for i in 0..5 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn add_scaled(y: &[f64; 5], k: &[f64; 5], h: f64) -> [f64; 5] {
    let mut out = *y;
    for i in 0..5 {
        out[i] += h * k[i];
    }
    out
}

/// Wraps an angle into [−π, π).
fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = (x + PI) % two_pi;
    if y < 0.0 {
        y += two_pi;
    }
    y - PI
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        for s in &mut self.state {
            *s = gen_range(rng, -0.1, 0.1);
        }
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if action >= 3 {
            return Err(EnvError::InvalidAction { action, action_count: 3 });
        }
        let augmented = [
            self.state[0],
            self.state[1],
            self.state[2],
            self.state[3],
            TORQUES[action],
        ];
        let next = rk4_step(&augmented, DT);
        self.state = [
            wrap_angle(next[0]),
            wrap_angle(next[1]),
            next[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            next[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        self.steps += 1;

        let terminated = self.solved();
        let truncated = !terminated && self.steps >= MAX_EPISODE_STEPS;
        Ok(StepResult {
            obs: self.observation(),
            reward: if terminated { 0.0 } else { -1.0 },
            terminated,
            truncated,
        })
    }
}
