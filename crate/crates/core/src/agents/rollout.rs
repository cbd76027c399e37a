use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    cost_features, policy_input, value_input, AgentError, EnvFactory, RolloutBuffer, Transition, ValueInputMode,
};
use crate::env::{PassEnv, StepResult};
use crate::graph::Graph;
use crate::nn::{Categorical, Mlp};

/// One environment instance with its own random stream.
#[derive(Debug, Clone)]
pub struct Worker {
    pub env: PassEnv,
    pub rng: ChaCha8Rng,
    episode_return: f64,
    discount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    /// Discounted sum of unshaped rewards.
    pub discounted_return: f64,
    pub final_op_count: u64,
}

impl Worker {
    /// Worker `index` draws from stream `index + 1` of the master seed;
    /// stream 0 is left to the updater.
    pub fn spawn(factory: &EnvFactory, seed: u64, index: usize) -> Result<Self, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let mut w = Self {
            env: factory.make()?,
            rng,
            episode_return: 0.0,
            discount: 1.0,
        };
        w.start_episode(&factory.graphs)?;
        Ok(w)
    }

    pub fn spawn_all(factory: &EnvFactory, seed: u64, n: usize) -> Result<Vec<Self>, AgentError> {
        if factory.graphs.is_empty() {
            return Err(AgentError::NoGraphs);
        }
        (0..n).map(|i| Self::spawn(factory, seed, i)).collect()
    }

    fn start_episode(&mut self, graphs: &[Graph]) -> Result<(), AgentError> {
        if graphs.is_empty() {
            return Err(AgentError::NoGraphs);
        }
        let g = &graphs[self.rng.gen_range(0..graphs.len())];
        self.env.reset(g)?;
        self.episode_return = 0.0;
        self.discount = 1.0;
        Ok(())
    }

    /// Takes `action`, reporting episode statistics when it ends the episode.
    pub(crate) fn advance(&mut self, action: usize) -> Result<(StepResult, Option<EpisodeStat>), AgentError> {
        let res = self.env.transition(action)?;
        let base = res.info.base_reward.unwrap_or(res.reward);
        self.episode_return += self.discount * base;
        self.discount *= self.env.config().gamma;
        let stat = res.done.then_some(EpisodeStat {
            discounted_return: self.episode_return,
            final_op_count: res.info.op_count,
        });
        Ok((res, stat))
    }

    pub(crate) fn restart_if_done(&mut self, graphs: &[Graph]) -> Result<(), AgentError> {
        if self.env.is_done() {
            self.start_episode(graphs)?;
        }
        Ok(())
    }

    fn sample_step(
        &mut self,
        logits: &[f64],
        observation: Vec<f64>,
        value_input: Vec<f64>,
        value_estimate: f64,
        graphs: &[Graph],
    ) -> Result<(Transition, Option<EpisodeStat>), AgentError> {
        let dist = Categorical::new(logits)?;
        let action = dist.sample(&mut self.rng);
        let log_prob = dist.log_prob(action)?;
        let (res, stat) = self.advance(action)?;
        let t = Transition {
            observation,
            value_input,
            action,
            reward: res.reward,
            base_reward: res.info.base_reward.unwrap_or(res.reward),
            next_observation: policy_input(&self.env)?,
            done: res.done,
            log_prob,
            value_estimate,
            cost_features: cost_features(&self.env)?,
        };
        self.restart_if_done(graphs)?;
        Ok((t, stat))
    }
}

/// Per-worker policy and value inputs.
type Inputs = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn batch_inputs(workers: &[Worker], mode: ValueInputMode) -> Result<Inputs, AgentError> {
    let mut p = Vec::with_capacity(workers.len());
    let mut v = Vec::with_capacity(workers.len());
    for w in workers {
        p.push(policy_input(&w.env)?);
        v.push(value_input(&w.env, mode)?);
    }
    Ok((p, v))
}

/// Collects `steps_per_worker` transitions from every worker with the given
/// networks. Worker segments land in the buffer in worker order.
pub fn collect_rollout(
    workers: &mut [Worker],
    graphs: &[Graph],
    policy: &Mlp,
    value: &Mlp,
    mode: ValueInputMode,
    steps_per_worker: usize,
) -> Result<(RolloutBuffer, Vec<EpisodeStat>), AgentError> {
    let n = workers.len();
    let actions = policy.output_dim();
    let mut segments: Vec<Vec<Transition>> = (0..n).map(|_| Vec::with_capacity(steps_per_worker)).collect();
    let mut stats = vec![];
    for _ in 0..steps_per_worker {
        let (p_in, v_in) = batch_inputs(workers, mode)?;
        let logits = policy.forward_batch(&p_in.concat(), n)?.output;
        let values = value.forward_batch(&v_in.concat(), n)?.output;
        let results: Vec<_> = workers
            .par_iter_mut()
            .zip(p_in.into_par_iter().zip(v_in))
            .enumerate()
            .map(|(i, (w, (p, v)))| w.sample_step(&logits[i * actions..(i + 1) * actions], p, v, values[i], graphs))
            .collect();
        for (seg, r) in segments.iter_mut().zip(results) {
            let (t, stat) = r?;
            seg.push(t);
            stats.extend(stat);
        }
    }
    let (_, v_in) = batch_inputs(workers, mode)?;
    let last_values = value.forward_batch(&v_in.concat(), n)?.output;
    let mut buffer = RolloutBuffer::new(n * steps_per_worker);
    for (seg, last) in segments.into_iter().zip(last_values) {
        buffer.push_segment(seg, last)?;
    }
    Ok((buffer, stats))
}
