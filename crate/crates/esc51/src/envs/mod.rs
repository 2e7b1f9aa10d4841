//! Self-contained classic-control tasks, the diagnostic equal-mean MDP, and a
//! sticky-action stochasticity wrapper. Dynamics follow the published
//! benchmark constants; no external RL framework is linked.

mod acrobot;
mod cartpole;
mod equal_mean;

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use equal_mean::EqualMeanMdp;

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action {action} for an environment with {action_count} actions")]
    InvalidAction { action: usize, action_count: usize },
    #[error("unknown environment name '{0}' (expected cartpole, acrobot, or equal-mean)")]
    UnknownEnv(String),
    #[error("sticky repeat probability must lie in [0, 1), got {0}")]
    BadRepeatProb(f64),
}

/// Outcome of one environment step. `terminated` marks a genuine terminal
/// state (bootstrap suppressed); `truncated` marks a time-limit cut where
/// bootstrapping must continue.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: u64,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode and returns the initial observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult, EnvError>;
}

/// With probability `repeat_prob` the previously executed action replaces the
/// requested one. The first step of every episode always executes the request.
pub struct StickyActions {
    inner: Box<dyn Environment>,
    repeat_prob: f64,
    prev_action: Option<usize>,
}

impl StickyActions {
    pub fn wrap(inner: Box<dyn Environment>, repeat_prob: f64) -> Result<Self, EnvError> {
        if !(0.0..1.0).contains(&repeat_prob) {
            return Err(EnvError::BadRepeatProb(repeat_prob));
        }
        Ok(Self { inner, repeat_prob, prev_action: None })
    }

    /// Fraction helper for tests: whether the last step repeated.
    pub fn last_executed(&self) -> Option<usize> {
        self.prev_action
    }
}

impl Environment for StickyActions {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.prev_action = None;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if action >= self.spec().action_count {
            return Err(EnvError::InvalidAction {
                action,
                action_count: self.spec().action_count,
            });
        }
        // No rng draw when stickiness is off, so a p = 0 wrapper consumes
        // exactly the same random stream as the bare environment.
        let executed = match self.prev_action {
            Some(prev) if self.repeat_prob > 0.0 && gen_f64(rng) < self.repeat_prob => prev,
            _ => action,
        };
        self.prev_action = Some(executed);
        self.inner.step(executed, rng)
    }
}

/// Environment selection by CLI name. `sticky` > 0 wraps the task.
pub fn make_env(name: &str, sticky: f64) -> Result<Box<dyn Environment>, EnvError> {
    let env: Box<dyn Environment> = match name {
        "cartpole" => Box::new(CartPole::new()),
        "acrobot" => Box::new(Acrobot::new()),
        "equal-mean" => Box::new(EqualMeanMdp::new()),
        other => return Err(EnvError::UnknownEnv(other.to_string())),
    };
    if sticky > 0.0 {
        Ok(Box::new(StickyActions::wrap(env, sticky)?))
    } else {
        Ok(env)
    }
}

/// Uniform draw in [0, 1) from a dyn rng.
pub(crate) fn gen_f64(rng: &mut dyn RngCore) -> f64 {
    // 53 random mantissa bits, the usual open-interval construction.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in [lo, hi).
pub(crate) fn gen_range(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * gen_f64(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn make_env_by_name() {
        assert_eq!(make_env("cartpole", 0.0).unwrap().spec().action_count, 2);
        assert_eq!(make_env("acrobot", 0.0).unwrap().spec().action_count, 3);
        assert_eq!(make_env("equal-mean", 0.0).unwrap().spec().action_count, 2);
        assert!(make_env("pong", 0.0).is_err());
        assert!(make_env("cartpole", 1.0).is_err());
    }

    #[test]
    fn sticky_zero_prob_matches_wrapped_env() {
        let mut plain = CartPole::new();
        let mut sticky = StickyActions::wrap(Box::new(CartPole::new()), 0.0).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(1);
        let oa = plain.reset(&mut rng_a);
        let ob = sticky.reset(&mut rng_b);
        assert_eq!(oa, ob);
        for t in 0..50 {
            let a = t % 2;
            let ra = plain.step(a, &mut rng_a).unwrap();
            let rb = sticky.step(a, &mut rng_b).unwrap();
            assert_eq!(ra, rb);
            if ra.terminated || ra.truncated {
                plain.reset(&mut rng_a);
                sticky.reset(&mut rng_b);
            }
        }
    }

    #[test]
    fn sticky_repeat_fraction_is_calibrated() {
        // Alternate requested actions so a repeat is observable as a mismatch.
        let mut env = StickyActions::wrap(Box::new(EqualMeanMdp::new()), 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.reset(&mut rng);
        let n = 100_000;
        let mut repeats = 0usize;
        let mut prev: Option<usize> = None;
        for t in 0..n {
            let requested = t % 2;
            env.step(requested, &mut rng).unwrap();
            let executed = env.last_executed().unwrap();
            if let Some(p) = prev {
                if executed != requested {
                    assert_eq!(executed, p);
                    repeats += 1;
                }
            } else {
                // First step always executes the request.
                assert_eq!(executed, requested);
            }
            prev = Some(executed);
            // EqualMeanMdp terminates every step; do not reset so prev_action
            // persists — stickiness is exercised across steps here.
        }
        let frac = repeats as f64 / (n - 1) as f64;
        // A repeat is only visible as a mismatch when the carried action
        // differs from the request. With alternating requests the chance the
        // executed action matches the request satisfies m = (1-p) + p(1-m),
        // so the observable mismatch fraction is p/(1+p) = 0.2 at p = 0.25.
        assert!((frac - 0.2).abs() <= 0.01, "repeat fraction {frac}");
    }

    #[test]
    fn sticky_is_deterministic_given_seed() {
        let run = || {
            let mut env = StickyActions::wrap(Box::new(CartPole::new()), 0.3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            env.reset(&mut rng);
            let mut trace = Vec::new();
            for t in 0..200 {
                let r = env.step(t % 2, &mut rng).unwrap();
                trace.push((env.last_executed().unwrap(), r.obs.clone()));
                if r.terminated || r.truncated {
                    env.reset(&mut rng);
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
