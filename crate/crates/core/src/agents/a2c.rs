use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{check_shaping_gamma, ActorCritic, RunInfo};
use super::{
    collect_rollout, AgentError, Algo, EnvFactory, LossParts, TrainFailure, TrainOutcome, TrainingLog, Transition,
    UpdateRecord, ValueInputMode, Worker,
};
use crate::nn::{Categorical, Gradients, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Steps per environment instance between updates.
    pub n_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub total_steps: usize,
    pub n_envs: usize,
    pub hidden_dims: Vec<usize>,
    pub value_input_mode: ValueInputMode,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            n_steps: 8,
            value_coef: 0.5,
            entropy_coef: 0.0,
            total_steps: 50_000,
            n_envs: 8,
            hidden_dims: vec![256, 256],
            value_input_mode: ValueInputMode::ObsOnly,
        }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.n_steps == 0 || self.n_envs == 0 || self.total_steps == 0 {
            return Err(AgentError::Config(
                "n_steps, n_envs and total_steps must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AgentError::Config("gamma must be in (0, 1] and lr positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(AgentError::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// `-mean(log pi(a|s) * A) + value_coef * mse(V, R) - entropy_coef * H`.
pub fn a2c_loss_and_gradients(
    policy: &Mlp,
    value: &Mlp,
    batch: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(LossParts, Gradients, Gradients), AgentError> {
    let b = batch.len();
    if b == 0 {
        return Err(AgentError::EmptyBuffer);
    }
    if advantages.len() != b || returns.len() != b {
        return Err(AgentError::Length(format!(
            "batch {b}, advantages {}",
            advantages.len()
        )));
    }
    let n = b as f64;
    let obs: Vec<f64> = batch.iter().flat_map(|t| t.observation.iter().copied()).collect();
    let vin: Vec<f64> = batch.iter().flat_map(|t| t.value_input.iter().copied()).collect();
    let pc = policy.forward_batch(&obs, b)?;
    let vc = value.forward_batch(&vin, b)?;
    let k = policy.output_dim();
    let mut parts = LossParts::default();
    let mut pg = vec![0.0; b * k];
    for (i, t) in batch.iter().enumerate() {
        let dist = Categorical::new(pc.output_row(i))?;
        let lp = dist.log_prob(t.action)?;
        parts.policy_loss -= lp * advantages[i] / n;
        parts.entropy += dist.entropy() / n;
        let row = &mut pg[i * k..(i + 1) * k];
        for (g, d) in row.iter_mut().zip(dist.log_prob_grad(t.action)) {
            *g -= advantages[i] * d / n;
        }
        if entropy_coef != 0.0 {
            for (g, d) in row.iter_mut().zip(dist.entropy_grad()) {
                *g -= entropy_coef * d / n;
            }
        }
    }
    let mut vg = vec![0.0; b];
    for i in 0..b {
        let diff = vc.output[i] - returns[i];
        parts.value_loss += diff * diff / n;
        vg[i] = value_coef * 2.0 * diff / n;
    }
    parts.total_loss = parts.policy_loss + value_coef * parts.value_loss - entropy_coef * parts.entropy;
    if !parts.total_loss.is_finite() {
        return Err(AgentError::Numeric("non-finite loss".into()));
    }
    let (gp, _) = policy.backward(&pc, &pg)?;
    let (gv, _) = value.backward(&vc, &vg)?;
    Ok((parts, gp, gv))
}

/// Synchronous advantage actor-critic: n-step returns, one gradient step per
/// rollout, no clipping and no advantage normalization.
pub fn a2c_train(factory: &EnvFactory, config: &A2cConfig, seed: u64) -> Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    check_shaping_gamma(factory, config.gamma)?;
    let action_count = factory.action_count()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ac = ActorCritic::new(
        action_count,
        &config.hidden_dims,
        config.value_input_mode,
        config.lr,
        &mut rng,
    );
    let mut workers = Worker::spawn_all(factory, seed, config.n_envs)?;
    let info = RunInfo {
        algo: Algo::A2c,
        seed,
        total_steps: config.total_steps,
        value_input_mode: Some(config.value_input_mode),
        value_input_len: Some(config.value_input_mode.input_len(action_count)),
        action_count,
        config: serde_json::to_value(config).expect("config serializes"),
    };
    let mut log = TrainingLog {
        meta: info.log_meta(factory),
        records: vec![],
    };
    let per_update = config.n_steps * config.n_envs;
    let updates = config.total_steps.div_ceil(per_update);
    let mut steps = 0;
    for u in 0..updates {
        let before = ac.clone();
        let result = (|| {
            let (mut buffer, stats) = collect_rollout(
                &mut workers,
                &factory.graphs,
                &ac.policy,
                &ac.value,
                config.value_input_mode,
                config.n_steps,
            )?;
            // lambda = 1 turns GAE into bootstrapped n-step returns.
            buffer.compute_gae(config.gamma, 1.0)?;
            let batch: Vec<&Transition> = buffer.transitions().iter().collect();
            let adv = buffer.advantages().expect("computed above");
            let ret = buffer.returns().expect("computed above");
            let (parts, gp, gv) = a2c_loss_and_gradients(
                &ac.policy,
                &ac.value,
                &batch,
                adv,
                ret,
                config.value_coef,
                config.entropy_coef,
            )?;
            ac.policy_opt.step(&mut ac.policy, &gp)?;
            ac.value_opt.step(&mut ac.value, &gv)?;
            Ok::<_, AgentError>((buffer.len(), stats, parts))
        })();
        let (collected, stats, parts) = match result {
            Ok(r) => r,
            Err(error) => {
                return Err(TrainFailure {
                    error,
                    last_good: Some(Box::new(before.outcome(info.training_meta(factory, steps, u), log))),
                })
            }
        };
        steps += collected;
        let mut record = UpdateRecord::from_episodes(u + 1, steps, &stats);
        record.policy_loss = Some(parts.policy_loss);
        record.value_loss = Some(parts.value_loss);
        record.entropy = Some(parts.entropy);
        log.records.push(record);
    }
    Ok(ac.outcome(info.training_meta(factory, steps, updates), log))
}
