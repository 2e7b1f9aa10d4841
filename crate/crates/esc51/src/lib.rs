//! Categorical distributional RL on fixed-atom supports: a C51-style learner
//! with either a greedy (QL-C51) or expected-Sarsa softmax-mixture (ES-C51)
//! distributional backup, self-contained classic-control environments, and a
//! seed-sweep comparison harness.

pub mod agent;
pub mod categorical;
pub mod envs;
pub mod experiment;
pub mod network;
pub mod policy;
pub mod replay;

pub use agent::{
    build_target_es, build_target_ql, train_agent, train_loop, Agent, AgentConfig, AgentError,
    Algorithm, ChurnProbe, NoHooks, TrainHooks,
};
pub use categorical::{
    mix, shift_and_project, CategoricalDistribution, CategoricalError, Support, PROB_SUM_TOL,
};
pub use envs::{make_env, EnvError, EnvSpec, Environment, StepResult, StickyActions};
pub use experiment::{
    compare, final_decile_mean, improvement_pct, run_training, wilcoxon_signed_rank,
    ComparisonReport, EpisodeLog, ExperimentError, RunRecord, TrainEventLog, WilcoxonResult,
    FORMAT_VERSION,
};
pub use network::{
    load_checkpoint, save_checkpoint, AdamOptimizer, Gradients, NetworkError, TargetNetwork,
    ValueDistributionNetwork,
};
pub use policy::{
    greedy_action, sample_action, softmax_probs, PolicyError, TemperatureSchedule,
};
pub use replay::{ReplayBuffer, ReplayError, Transition};
