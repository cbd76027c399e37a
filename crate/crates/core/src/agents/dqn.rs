use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{check_shaping_gamma, RunInfo};
use super::{
    cost_features, policy_input, policy_input_len, AgentError, Algo, Checkpoint, EnvFactory, EpisodeStat,
    OptimizerState, ReplayBuffer, TrainFailure, TrainOutcome, TrainingLog, Transition, UpdateRecord, Worker,
};
use crate::nn::{argmax, AdamConfig, AdamState, Gradients, Mlp, MlpSizes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps between hard target-network copies.
    pub target_update_interval: usize,
    pub exploration_initial: f64,
    pub exploration_final: f64,
    /// Fraction of `total_steps` over which epsilon decays linearly.
    pub exploration_fraction: f64,
    pub total_steps: usize,
    /// Environment steps between gradient steps.
    pub train_freq: usize,
    pub hidden_dims: Vec<usize>,
    /// Environment steps per log record.
    pub log_interval: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            target_update_interval: 1000,
            exploration_initial: 1.0,
            exploration_final: 0.05,
            exploration_fraction: 0.2,
            total_steps: 50_000,
            train_freq: 4,
            hidden_dims: vec![256, 256],
            log_interval: 1000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.exploration_initial) || !unit.contains(&self.exploration_final) {
            return Err(AgentError::Config("exploration endpoints must lie in [0, 1]".into()));
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return Err(AgentError::Config("exploration_fraction must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AgentError::Config("gamma must be in [0, 1] and lr positive".into()));
        }
        let counts = [
            self.batch_size,
            self.buffer_capacity,
            self.target_update_interval,
            self.total_steps,
            self.train_freq,
            self.log_interval,
        ];
        if counts.contains(&0) || self.hidden_dims.contains(&0) {
            return Err(AgentError::Config(
                "sizes, intervals and step counts must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let span = self.exploration_fraction * self.total_steps as f64;
        let progress = (step as f64 / span).min(1.0);
        self.exploration_initial + progress * (self.exploration_final - self.exploration_initial)
    }
}

/// `r + gamma * (1 - done) * max_a Q_target(s', a)` for each transition.
pub fn dqn_targets(target: &Mlp, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, AgentError> {
    let next: Vec<f64> = batch.iter().flat_map(|t| t.next_observation.iter().copied()).collect();
    let q = target.forward_batch(&next, batch.len())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                let row = q.output_row(i);
                t.reward + gamma * row[argmax(row)]
            }
        })
        .collect())
}

fn td_loss_and_gradients(q: &Mlp, targets: &[f64], batch: &[&Transition]) -> Result<(f64, Gradients), AgentError> {
    let b = batch.len();
    let obs: Vec<f64> = batch.iter().flat_map(|t| t.observation.iter().copied()).collect();
    let cache = q.forward_batch(&obs, b)?;
    let k = q.output_dim();
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let diff = cache.output_row(i)[t.action] - targets[i];
        loss += diff * diff / b as f64;
        grad[i * k + t.action] = 2.0 * diff / b as f64;
    }
    if !loss.is_finite() {
        return Err(AgentError::Numeric("non-finite TD loss".into()));
    }
    Ok((loss, q.backward(&cache, &grad)?.0))
}

/// Epsilon-greedy Q-learning with uniform replay and a hard-copied target
/// network. No gradient step happens until the replay holds a full batch.
pub fn dqn_train(factory: &EnvFactory, config: &DqnConfig, seed: u64) -> Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    check_shaping_gamma(factory, config.gamma)?;
    let action_count = factory.action_count()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Mlp::new(
        MlpSizes::new(policy_input_len(action_count), config.hidden_dims.clone(), action_count),
        1.0,
        &mut rng,
    );
    let mut target = q.clone();
    let mut opt = AdamState::new(
        &q,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    if factory.graphs.is_empty() {
        return Err(AgentError::NoGraphs.into());
    }
    let mut worker = Worker::spawn(factory, seed, 0)?;
    let mut replay = ReplayBuffer::new(config.buffer_capacity);
    let info = RunInfo {
        algo: Algo::Dqn,
        seed,
        total_steps: config.total_steps,
        value_input_mode: None,
        value_input_len: None,
        action_count,
        config: serde_json::to_value(config).expect("config serializes"),
    };
    let mut log = TrainingLog {
        meta: info.log_meta(factory),
        records: vec![],
    };
    let outcome = |q: &Mlp, opt: &AdamState, log: TrainingLog, steps, updates| TrainOutcome {
        checkpoint: Checkpoint::new(
            q,
            None,
            OptimizerState {
                policy: opt.clone(),
                value: None,
            },
            info.training_meta(factory, steps, updates),
        ),
        log,
    };
    let mut window: Vec<EpisodeStat> = vec![];
    let mut losses: Vec<f64> = vec![];
    let mut gradient_steps = 0;
    for step in 0..config.total_steps {
        let result = (|| {
            let obs = policy_input(&worker.env)?;
            let action = if worker.rng.gen::<f64>() < config.epsilon(step) {
                worker.rng.gen_range(0..action_count)
            } else {
                argmax(&q.predict(&obs)?)
            };
            let (res, stat) = worker.advance(action)?;
            replay.push(Transition {
                observation: obs,
                value_input: vec![],
                action,
                reward: res.reward,
                base_reward: res.info.base_reward.unwrap_or(res.reward),
                next_observation: policy_input(&worker.env)?,
                done: res.done,
                log_prob: 0.0,
                value_estimate: 0.0,
                cost_features: cost_features(&worker.env)?,
            });
            window.extend(stat);
            worker.restart_if_done(&factory.graphs)?;
            if replay.len() >= config.batch_size && (step + 1) % config.train_freq == 0 {
                let batch = replay.sample(config.batch_size, &mut rng);
                let targets = dqn_targets(&target, &batch, config.gamma)?;
                let (loss, grads) = td_loss_and_gradients(&q, &targets, &batch)?;
                opt.step(&mut q, &grads)?;
                losses.push(loss);
                gradient_steps += 1;
            }
            if (step + 1) % config.target_update_interval == 0 {
                target = q.clone();
            }
            Ok::<_, AgentError>(())
        })();
        if let Err(error) = result {
            // Losses and gradients are checked before any parameter moves.
            let updates = log.records.len();
            return Err(TrainFailure {
                error,
                last_good: Some(Box::new(outcome(&q, &opt, log, step, updates))),
            });
        }
        if (step + 1) % config.log_interval == 0 || step + 1 == config.total_steps {
            let mut record = UpdateRecord::from_episodes(log.records.len() + 1, step + 1, &window);
            if !losses.is_empty() {
                record.value_loss = Some(losses.iter().sum::<f64>() / losses.len() as f64);
            }
            log.records.push(record);
            window.clear();
            losses.clear();
        }
    }
    Ok(outcome(&q, &opt, log, config.total_steps, gradient_steps))
}
