//! Learning agents over [`PassEnv`] (PPO, A2C, DQN), non-learning baselines,
//! and single-episode policy evaluation.
//!
//! Networks never see raw counts. A policy input is the observation divided
//! by the episode's initial op count, followed by the fraction of the horizon
//! already used and one flag per action marking passes that are known to be
//! no-ops on the current graph.

mod a2c;
mod baseline;
mod buffer;
mod checkpoint;
mod dqn;
mod ppo;
mod rollout;

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use a2c::{a2c_loss_and_gradients, a2c_train, A2cConfig};
pub use baseline::{brute_force_optimal, greedy_baseline, BruteForceResult, GreedyPolicy, BRUTE_FORCE_BUDGET};
pub use buffer::{compute_gae, ReplayBuffer, RolloutBuffer, Transition};
pub use checkpoint::{
    Algo, Checkpoint, CheckpointError, LogMeta, NetworkRecord, OptimizerState, TrainFailure, TrainOutcome, TrainingLog,
    TrainingMeta, UpdateRecord, CHECKPOINT_VERSION,
};
pub use dqn::{dqn_targets, dqn_train, DqnConfig};
pub use ppo::{
    ppo_loss_and_gradients, ppo_train, ppo_update, LossParts, PpoConfig, SurrogateSettings, UpdateDiagnostics,
};
pub use rollout::{collect_rollout, EpisodeStat, Worker};

use crate::env::{EnvConfig, EnvError, PassEnv};
use crate::graph::{Graph, OBSERVATION_LEN};
use crate::nn::{argmax, Categorical, Mlp, NnError};
use crate::passes::{Catalog, PassError, PassId};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Nn(NnError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("search space of {0} sequences exceeds the budget of {1}")]
    Budget(u128, u64),
    #[error("no training graphs")]
    NoGraphs,
}

impl From<NnError> for AgentError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(what) => AgentError::Numeric(what),
            other => AgentError::Nn(other),
        }
    }
}

/// Scaled observation, episode progress, then one settled flag per action.
pub fn policy_input_len(action_count: usize) -> usize {
    OBSERVATION_LEN + 1 + action_count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueInputMode {
    #[default]
    ObsOnly,
    /// Value input additionally carries flop and transcendental counts,
    /// each divided by the episode's initial flop count.
    ObsPlusCostFeatures,
}

impl ValueInputMode {
    pub fn input_len(self, action_count: usize) -> usize {
        match self {
            ValueInputMode::ObsOnly => policy_input_len(action_count),
            ValueInputMode::ObsPlusCostFeatures => policy_input_len(action_count) + 2,
        }
    }
}

pub fn policy_input(env: &PassEnv) -> Result<Vec<f64>, EnvError> {
    let initial = env.initial_cost()?.op_count.max(1) as f64;
    let mut v: Vec<f64> = env.observation()?.0.iter().map(|x| x / initial).collect();
    v.push(env.step_index()? as f64 / env.config().horizon as f64);
    v.extend(env.settled_actions()?.iter().map(|&s| if s { 1.0 } else { 0.0 }));
    Ok(v)
}

pub fn cost_features(env: &PassEnv) -> Result<[f64; 2], EnvError> {
    let scale = env.initial_cost()?.flop_count.max(1) as f64;
    let c = env.current_cost()?;
    Ok([c.flop_count as f64 / scale, c.transcendental_count as f64 / scale])
}

pub fn value_input(env: &PassEnv, mode: ValueInputMode) -> Result<Vec<f64>, EnvError> {
    let mut v = policy_input(env)?;
    if mode == ValueInputMode::ObsPlusCostFeatures {
        v.extend(cost_features(env)?);
    }
    Ok(v)
}

/// Everything needed to build training environments.
#[derive(Debug, Clone)]
pub struct EnvFactory {
    pub config: EnvConfig,
    pub catalog: Arc<Catalog>,
    pub graphs: Vec<Graph>,
}

impl EnvFactory {
    pub fn new(config: EnvConfig, catalog: Arc<Catalog>, graphs: Vec<Graph>) -> Self {
        Self {
            config,
            catalog,
            graphs,
        }
    }

    pub fn make(&self) -> Result<PassEnv, AgentError> {
        Ok(PassEnv::new(self.config.clone(), Arc::clone(&self.catalog))?)
    }

    pub fn action_count(&self) -> Result<usize, AgentError> {
        Ok(self.make()?.action_space_size())
    }
}

pub trait Policy: Sync {
    /// Chooses the next action for the environment's current state.
    fn act(&self, env: &PassEnv, deterministic: bool, rng: &mut dyn RngCore) -> Result<usize, AgentError>;
}

/// Softmax policy over the logits of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorPolicy {
    pub net: Mlp,
}

impl Policy for ActorPolicy {
    fn act(&self, env: &PassEnv, deterministic: bool, rng: &mut dyn RngCore) -> Result<usize, AgentError> {
        let logits = self.net.predict(&policy_input(env)?)?;
        if deterministic {
            return Ok(argmax(&logits));
        }
        Ok(Categorical::new(&logits)?.sample(rng))
    }
}

/// Greedy policy over Q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    pub net: Mlp,
}

impl Policy for QPolicy {
    fn act(&self, env: &PassEnv, _: bool, _: &mut dyn RngCore) -> Result<usize, AgentError> {
        Ok(argmax(&self.net.predict(&policy_input(env)?)?))
    }
}

/// Plays a fixed action list, repeating the last entry once it runs out.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePolicy(pub Vec<usize>);

impl Policy for SequencePolicy {
    fn act(&self, env: &PassEnv, _: bool, _: &mut dyn RngCore) -> Result<usize, AgentError> {
        let t = env.step_index()?;
        Ok(self.0.get(t).or(self.0.last()).copied().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub actions: Vec<usize>,
    pub passes: Vec<PassId>,
    pub rewards: Vec<f64>,
    pub initial_op_count: u64,
    pub final_op_count: u64,
    /// Discounted sum of the unshaped rewards.
    pub episode_return: f64,
    pub final_graph: Graph,
}

/// Runs one full episode on `graph` with unshaped rewards.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: &mut PassEnv,
    graph: &Graph,
    deterministic: bool,
    rng: &mut dyn RngCore,
) -> Result<EpisodeOutcome, AgentError> {
    env.reset(graph)?;
    let gamma = env.config().gamma;
    let initial_op_count = env.initial_cost()?.op_count;
    let (mut actions, mut passes, mut rewards) = (vec![], vec![], vec![]);
    let mut episode_return = 0.0;
    let mut discount = 1.0;
    while !env.is_done() {
        let a = policy.act(env, deterministic, rng)?;
        let r = env.step(a)?;
        passes.push(env.action_pass(a)?);
        actions.push(a);
        rewards.push(r.reward);
        episode_return += discount * r.reward;
        discount *= gamma;
    }
    Ok(EpisodeOutcome {
        actions,
        passes,
        rewards,
        initial_op_count,
        final_op_count: env.current_cost()?.op_count,
        episode_return,
        final_graph: env.current_graph()?.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::nn::MlpSizes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_graph() -> Graph {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([2]);
        let n = b.neg(x).unwrap();
        let nn = b.neg(n).unwrap();
        let t = b.tanh(nn).unwrap();
        b.finish(t)
    }

    fn env() -> PassEnv {
        PassEnv::new(EnvConfig::default(), Arc::new(Catalog::standard())).unwrap()
    }

    #[test]
    fn uniform_policy_deterministic_picks_action_zero() {
        let policy = ActorPolicy {
            net: Mlp::zeros(MlpSizes::new(policy_input_len(12), [4], 12)),
        };
        let before = policy.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = evaluate_policy(&policy, &mut env(), &small_graph(), true, &mut rng).unwrap();
        assert!(out.actions.iter().all(|&a| a == 0));
        assert_eq!(out.actions.len(), 16);
        assert_eq!(policy, before);
    }

    #[test]
    fn episode_return_is_discounted_reward_sum() {
        let policy = SequencePolicy(vec![5, 1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = evaluate_policy(&policy, &mut env(), &small_graph(), true, &mut rng).unwrap();
        let expected: f64 = out
            .rewards
            .iter()
            .enumerate()
            .map(|(t, r)| 0.99f64.powi(t as i32) * r)
            .sum();
        assert!((out.episode_return - expected).abs() < 1e-12);
        assert_eq!(out.initial_op_count, 3);
        assert_eq!(out.final_op_count, 1);
    }

    #[test]
    fn policy_input_is_scaled_with_progress() {
        let mut e = env();
        e.reset(&small_graph()).unwrap();
        let v = policy_input(&e).unwrap();
        let len = policy_input_len(12);
        assert_eq!(v.len(), len);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[OBSERVATION_LEN], 0.0);
        assert!(v[OBSERVATION_LEN + 1..].iter().all(|&x| x == 0.0));
        e.step(0).unwrap();
        let v = policy_input(&e).unwrap();
        assert_eq!(v[OBSERVATION_LEN], 1.0 / 16.0);
        assert_eq!(v[OBSERVATION_LEN + 1], 1.0);
        assert_eq!(
            value_input(&e, ValueInputMode::ObsPlusCostFeatures).unwrap().len(),
            len + 2
        );
    }
}
