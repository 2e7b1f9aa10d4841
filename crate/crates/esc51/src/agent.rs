//! The two learners: QL-C51 (greedy distributional backup) and ES-C51
//! (expected-Sarsa softmax-mixture backup). They share action selection,
//! projection, replay, and the cross-entropy update; the only difference is
//! how the target distribution at s' is constructed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::categorical::{project_into, CategoricalDistribution, CategoricalError, Support};
use crate::envs::{EnvError, Environment};
use crate::experiment::{EpisodeLog, RunRecord, TrainEventLog, FORMAT_VERSION};
use crate::network::{
    accumulate_loss_and_gradients, q_values_from_flat, AdamOptimizer, Gradients, NetworkError,
    Scratch, TargetNetwork, ValueDistributionNetwork,
};
use crate::policy::{
    greedy_action, sample_action, softmax_probs, PolicyError, TemperatureSchedule,
};
use crate::replay::{ReplayBuffer, ReplayError, Transition};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Categorical(#[from] CategoricalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("run diverged (non-finite loss) at timestep {timestep}")]
    Diverged { timestep: u64, record: Box<RunRecord> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    QlC51,
    EsC51,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::QlC51 => "ql-c51",
            Algorithm::EsC51 => "es-c51",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ql-c51" | "ql_c51" | "qlc51" => Ok(Algorithm::QlC51),
            "es-c51" | "es_c51" | "esc51" => Ok(Algorithm::EsC51),
            other => Err(format!("unknown algorithm '{other}' (expected ql-c51 or es-c51)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full training configuration. Defaults are the standard classic-control
/// values for this family of agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub batch_size: usize,
    pub train_frequency: u64,
    pub learning_starts: u64,
    pub target_update_interval: u64,
    pub total_timesteps: u64,
    pub n_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub tau_start: f64,
    pub tau_floor: f64,
    pub tau_decay_fraction: f64,
    /// Number of probe states for the policy-churn diagnostic; 0 disables it.
    pub churn_probe_size: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::EsC51,
            gamma: 0.99,
            batch_size: 128,
            train_frequency: 10,
            learning_starts: 10_000,
            target_update_interval: 500,
            total_timesteps: 500_000,
            n_atoms: 101,
            v_min: -100.0,
            v_max: 100.0,
            hidden_dims: vec![120, 84],
            learning_rate: 2.5e-4,
            buffer_capacity: 10_000,
            tau_start: 1.0,
            tau_floor: 0.01,
            tau_decay_fraction: 0.75,
            churn_probe_size: 0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |msg: &str| Err(AgentError::InvalidConfig(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.train_frequency == 0 || self.target_update_interval == 0 {
            return fail("batch size and intervals must be at least 1");
        }
        if self.buffer_capacity == 0 {
            return fail("buffer capacity must be positive");
        }
        Support::new(self.n_atoms, self.v_min, self.v_max)?;
        TemperatureSchedule::new(
            self.tau_start,
            self.tau_floor,
            self.tau_decay_fraction,
            self.total_timesteps,
        )?;
        Ok(())
    }

    pub fn support(&self) -> Result<Support, CategoricalError> {
        Support::new(self.n_atoms, self.v_min, self.v_max)
    }

    pub fn schedule(&self) -> Result<TemperatureSchedule, PolicyError> {
        TemperatureSchedule::new(
            self.tau_start,
            self.tau_floor,
            self.tau_decay_fraction,
            self.total_timesteps,
        )
    }
}

/// Greedy backup: project the target-net distribution of the action with the
/// highest expected return at s'.
pub fn build_target_ql(
    batch: &[&Transition],
    target_net: &TargetNetwork,
    support: &Support,
    gamma: f64,
) -> Result<Vec<CategoricalDistribution>, AgentError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch.into());
    }
    let net = target_net.network();
    let n = support.n_atoms();
    let mut scratch = Scratch::default();
    let mut out = Vec::with_capacity(batch.len());
    for tr in batch {
        let probs = net.forward_probs_into(&tr.next_obs, &mut scratch);
        let q = q_values_from_flat(probs, support.atoms(), net.action_count);
        let best = greedy_action(&q)?;
        let mut projected = vec![0.0; n];
        project_into(
            &probs[best * n..(best + 1) * n],
            support,
            tr.reward,
            gamma,
            tr.done,
            &mut projected,
        );
        out.push(CategoricalDistribution::from_probs_unchecked(projected));
    }
    Ok(out)
}

/// Expected-Sarsa backup: mix the target-net distributions at s' under the
/// softmax policy at temperature `tau`, then project the mixture.
pub fn build_target_es(
    batch: &[&Transition],
    target_net: &TargetNetwork,
    support: &Support,
    gamma: f64,
    tau: f64,
) -> Result<Vec<CategoricalDistribution>, AgentError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch.into());
    }
    let net = target_net.network();
    let n = support.n_atoms();
    let actions = net.action_count;
    let mut scratch = Scratch::default();
    let mut mixed = vec![0.0; n];
    let mut out = Vec::with_capacity(batch.len());
    for tr in batch {
        let probs = net.forward_probs_into(&tr.next_obs, &mut scratch);
        let q = q_values_from_flat(probs, support.atoms(), actions);
        let weights = softmax_probs(&q, tau)?;
        mixed.iter_mut().for_each(|m| *m = 0.0);
        for (a, &w) in weights.iter().enumerate() {
            let block = &probs[a * n..(a + 1) * n];
            for (m, &p) in mixed.iter_mut().zip(block) {
                *m += w * p;
            }
        }
        let mut projected = vec![0.0; n];
        project_into(&mixed, support, tr.reward, gamma, tr.done, &mut projected);
        out.push(CategoricalDistribution::from_probs_unchecked(projected));
    }
    Ok(out)
}

/// Policy-churn diagnostic: a frozen set of probe states and the last greedy
/// action recorded at each.
pub struct ChurnProbe {
    probe_states: Vec<Vec<f64>>,
    previous_greedy: Vec<usize>,
    scratch: Scratch,
}

impl ChurnProbe {
    pub fn new(
        probe_states: Vec<Vec<f64>>,
        net: &ValueDistributionNetwork,
        support: &Support,
    ) -> Result<Self, AgentError> {
        let mut probe = Self { probe_states, previous_greedy: Vec::new(), scratch: Scratch::default() };
        probe.previous_greedy = probe.greedy_all(net, support)?;
        Ok(probe)
    }

    pub fn len(&self) -> usize {
        self.probe_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe_states.is_empty()
    }

    fn greedy_all(
        &mut self,
        net: &ValueDistributionNetwork,
        support: &Support,
    ) -> Result<Vec<usize>, AgentError> {
        let mut out = Vec::with_capacity(self.probe_states.len());
        for obs in &self.probe_states {
            let probs = net.forward_probs_into(obs, &mut self.scratch);
            let q = q_values_from_flat(probs, support.atoms(), net.action_count);
            out.push(greedy_action(&q)?);
        }
        Ok(out)
    }

    /// Fraction of probe states whose greedy action changed since the last
    /// call; refreshes the recorded actions.
    pub fn churn_rate(
        &mut self,
        net: &ValueDistributionNetwork,
        support: &Support,
    ) -> Result<f64, AgentError> {
        let current = self.greedy_all(net, support)?;
        let changed = current
            .iter()
            .zip(&self.previous_greedy)
            .filter(|(a, b)| a != b)
            .count();
        let rate = changed as f64 / self.probe_states.len() as f64;
        self.previous_greedy = current;
        Ok(rate)
    }
}

/// Online network, frozen target copy, optimizer, and support bundled for one
/// training run.
pub struct Agent {
    pub config: AgentConfig,
    pub support: Support,
    pub schedule: TemperatureSchedule,
    pub net: ValueDistributionNetwork,
    pub target: TargetNetwork,
    pub optimizer: AdamOptimizer,
    scratch: Scratch,
}

impl Agent {
    pub fn new(
        config: &AgentConfig,
        obs_dim: usize,
        action_count: usize,
        init_rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let support = config.support()?;
        let schedule = config.schedule()?;
        let net = ValueDistributionNetwork::new(
            obs_dim,
            action_count,
            config.n_atoms,
            &config.hidden_dims,
            init_rng,
        );
        let target = TargetNetwork::from_network(&net);
        let optimizer = AdamOptimizer::new(&net, config.learning_rate);
        Ok(Self {
            config: config.clone(),
            support,
            schedule,
            net,
            target,
            optimizer,
            scratch: Scratch::default(),
        })
    }

    /// Per-action expected returns from the online network.
    pub fn online_q_values(&mut self, obs: &[f64]) -> Vec<f64> {
        let probs = self.net.forward_probs_into(obs, &mut self.scratch);
        q_values_from_flat(probs, self.support.atoms(), self.net.action_count)
    }

    /// Softmax action selection at the scheduled temperature for timestep `t`.
    /// Both algorithms act identically.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        obs: &[f64],
        t: u64,
        rng: &mut R,
    ) -> Result<usize, AgentError> {
        let tau = self.schedule.tau_at(t);
        let q = self.online_q_values(obs);
        let probs = softmax_probs(&q, tau)?;
        Ok(sample_action(&probs, rng)?)
    }
}

/// Observation points for the training loop; default implementations ignore
/// everything.
pub trait TrainHooks {
    fn on_episode(&mut self, _episode: &EpisodeLog) {}
    fn on_train_event(&mut self, _event: &TrainEventLog) {}
}

/// No-op hooks.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

fn derived_rng(master: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master.next_u64())
}

/// Runs the full training loop for `config.total_timesteps` environment
/// steps: act, store, periodically sample a batch, build the configured
/// target, take one gradient step, and sync the target network. Fully
/// deterministic given `config.seed`.
pub fn train_loop<H: TrainHooks>(
    config: &AgentConfig,
    env: &mut dyn Environment,
    env_name: &str,
    hooks: &mut H,
) -> Result<RunRecord, AgentError> {
    train_agent(config, env, env_name, hooks).map(|(record, _)| record)
}

/// As [`train_loop`], but also hands back the trained agent for inspection.
pub fn train_agent<H: TrainHooks>(
    config: &AgentConfig,
    env: &mut dyn Environment,
    env_name: &str,
    hooks: &mut H,
) -> Result<(RunRecord, Agent), AgentError> {
    config.validate()?;
    let started = std::time::Instant::now();

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init_rng = derived_rng(&mut master);
    let mut env_rng = derived_rng(&mut master);
    let mut action_rng = derived_rng(&mut master);
    let mut buffer_rng = derived_rng(&mut master);

    let (obs_dim, action_count) = {
        let spec = env.spec();
        (spec.observation_dim, spec.action_count)
    };
    let mut agent = Agent::new(config, obs_dim, action_count, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut churn_probe: Option<ChurnProbe> = None;

    let mut record = RunRecord {
        format_version: FORMAT_VERSION,
        env: env_name.to_string(),
        algorithm: config.algorithm,
        seed: config.seed,
        config: config.clone(),
        episodes: Vec::new(),
        train_events: Vec::new(),
        duration_secs: 0.0,
        diverged_at: None,
    };

    let mut grads = Gradients::zeros_like(&agent.net);
    let mut loss_scratch = Scratch::default();

    let mut obs = env.reset(&mut env_rng);
    let mut episode = 0u64;
    let mut episode_return = 0.0;
    let mut episode_length = 0u64;

    for t in 1..=config.total_timesteps {
        let action = agent.act(&obs, t, &mut action_rng).map_err(|e| match e {
            // A non-finite Q-value during acting means the network blew up.
            AgentError::Policy(PolicyError::NonFiniteQValue(_)) => diverged(t, &mut record, &started),
            other => other,
        })?;
        let step = env.step(action, &mut env_rng)?;
        buffer.push(Transition {
            obs: obs.clone(),
            action,
            reward: step.reward,
            // Bootstrap through time-limit truncation: done only on genuine
            // terminal states.
            next_obs: step.obs.clone(),
            done: step.terminated,
        });
        episode_return += step.reward;
        episode_length += 1;

        if step.terminated || step.truncated {
            episode += 1;
            let log = EpisodeLog {
                timestep: t,
                episode,
                episode_return,
                length: episode_length,
            };
            hooks.on_episode(&log);
            record.episodes.push(log);
            episode_return = 0.0;
            episode_length = 0;
            obs = env.reset(&mut env_rng);
        } else {
            obs = step.obs;
        }

        if t > config.learning_starts && t % config.train_frequency == 0 {
            let tau = agent.schedule.tau_at(t);
            if churn_probe.is_none() && config.churn_probe_size > 0 {
                // Probe states come from the earliest post-warm-up replay
                // contents and stay fixed afterwards.
                let states: Vec<Vec<f64>> = buffer
                    .iter_ordered()
                    .take(config.churn_probe_size)
                    .map(|tr| tr.obs.clone())
                    .collect();
                churn_probe = Some(ChurnProbe::new(states, &agent.net, &agent.support)?);
            }

            let batch = buffer.sample_uniform(config.batch_size, &mut buffer_rng)?;
            let targets = match config.algorithm {
                Algorithm::QlC51 => {
                    build_target_ql(&batch, &agent.target, &agent.support, config.gamma)?
                }
                Algorithm::EsC51 => {
                    build_target_es(&batch, &agent.target, &agent.support, config.gamma, tau)?
                }
            };
            let actions: Vec<usize> = batch.iter().map(|tr| tr.action).collect();
            let loss = accumulate_loss_and_gradients(
                &agent.net,
                batch.iter().map(|tr| tr.obs.as_slice()),
                &actions,
                &targets,
                &mut grads,
                &mut loss_scratch,
            )?;
            if !loss.is_finite() {
                return Err(diverged(t, &mut record, &started));
            }
            agent.optimizer.apply_update(&mut agent.net, &grads)?;

            let churn = match &mut churn_probe {
                Some(probe) if !probe.is_empty() => {
                    Some(probe.churn_rate(&agent.net, &agent.support)?)
                }
                _ => None,
            };
            let event = TrainEventLog { timestep: t, loss, tau, churn };
            hooks.on_train_event(&event);
            record.train_events.push(event);
        }

        if t % config.target_update_interval == 0 {
            agent.target.sync(&agent.net)?;
        }
    }

    record.duration_secs = started.elapsed().as_secs_f64();
    Ok((record, agent))
}

fn diverged(t: u64, record: &mut RunRecord, started: &std::time::Instant) -> AgentError {
    record.diverged_at = Some(t);
    record.duration_secs = started.elapsed().as_secs_f64();
    AgentError::Diverged { timestep: t, record: Box::new(std::mem::replace(record, RunRecord::empty())) }
}
