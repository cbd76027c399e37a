use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::normalize;
use super::{
    policy_input_len, AgentError, Algo, Checkpoint, EnvFactory, LogMeta, OptimizerState, RolloutBuffer, TrainFailure,
    TrainOutcome, TrainingLog, TrainingMeta, Transition, UpdateRecord, ValueInputMode, Worker,
};
use crate::nn::{AdamConfig, AdamState, Categorical, Gradients, Mlp, MlpSizes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    /// Transitions per update, summed over all environment instances.
    pub n_steps: usize,
    pub total_steps: usize,
    pub n_envs: usize,
    pub hidden_dims: Vec<usize>,
    pub value_input_mode: ValueInputMode,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            lr: 3e-4,
            batch_size: 256,
            n_epochs: 10,
            n_steps: 2048,
            total_steps: 50_000,
            n_envs: 8,
            hidden_dims: vec![256, 256],
            value_input_mode: ValueInputMode::ObsOnly,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: String| Err(AgentError::Config(m));
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return fail(format!("clip_range {} not in (0, 1)", self.clip_range));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gamma must be in (0, 1] and gae_lambda in [0, 1]".into());
        }
        if self.batch_size == 0 || self.batch_size > self.n_steps {
            return fail(format!(
                "batch_size {} must be in 1..={}",
                self.batch_size, self.n_steps
            ));
        }
        if self.n_envs == 0 || !self.n_steps.is_multiple_of(self.n_envs) {
            return fail(format!(
                "n_steps {} must be a multiple of n_envs {}",
                self.n_steps, self.n_envs
            ));
        }
        if self.n_epochs == 0 || self.total_steps == 0 {
            return fail("n_epochs and total_steps must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !self.value_coef.is_finite() || !self.entropy_coef.is_finite() {
            return fail("lr must be positive; coefficients finite".into());
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Loss terms of one minibatch. `clip_range = None` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSettings {
    pub clip_range: Option<f64>,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Largest `|ratio - 1|` in the batch.
    pub max_ratio_deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    /// Means over all minibatches of all epochs.
    pub mean: LossParts,
    /// First minibatch of the first epoch, before any parameter change.
    pub first: LossParts,
    pub minibatches: usize,
}

fn gather(batch: &[&Transition], field: impl Fn(&Transition) -> &[f64]) -> Vec<f64> {
    batch.iter().flat_map(|t| field(t).iter().copied()).collect()
}

/// Clipped surrogate plus value regression. Returns the loss terms and the
/// gradients of the total loss for the policy and value networks.
pub fn ppo_loss_and_gradients(
    policy: &Mlp,
    value: &Mlp,
    batch: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    settings: &SurrogateSettings,
) -> Result<(LossParts, Gradients, Gradients), AgentError> {
    let b = batch.len();
    if b == 0 {
        return Err(AgentError::EmptyBuffer);
    }
    if advantages.len() != b || returns.len() != b {
        return Err(AgentError::Length(format!(
            "batch {b}, advantages {}, returns {}",
            advantages.len(),
            returns.len()
        )));
    }
    let n = b as f64;
    let pc = policy.forward_batch(&gather(batch, |t| &t.observation), b)?;
    let vc = value.forward_batch(&gather(batch, |t| &t.value_input), b)?;
    let actions = policy.output_dim();
    let mut parts = LossParts::default();
    let mut policy_grad = vec![0.0; b * actions];
    let mut clipped = 0usize;
    for (i, t) in batch.iter().enumerate() {
        let dist = Categorical::new(pc.output_row(i))?;
        let log_prob = dist.log_prob(t.action)?;
        let ratio = (log_prob - t.log_prob).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let (objective, coef) = match settings.clip_range {
            Some(eps) => {
                let bounded = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                if (ratio - 1.0).abs() > eps {
                    clipped += 1;
                }
                if unclipped <= bounded {
                    (unclipped, unclipped)
                } else {
                    (bounded, 0.0)
                }
            }
            None => (unclipped, unclipped),
        };
        let entropy = dist.entropy();
        parts.policy_loss -= objective / n;
        parts.entropy += entropy / n;
        parts.approx_kl += ((ratio - 1.0) - (log_prob - t.log_prob)) / n;
        parts.max_ratio_deviation = parts.max_ratio_deviation.max((ratio - 1.0).abs());
        let row = &mut policy_grad[i * actions..(i + 1) * actions];
        // d(-objective)/dlogits = -coef * dlogp/dlogits
        if coef != 0.0 {
            for (g, d) in row.iter_mut().zip(dist.log_prob_grad(t.action)) {
                *g -= coef * d / n;
            }
        }
        if settings.entropy_coef != 0.0 {
            for (g, d) in row.iter_mut().zip(dist.entropy_grad()) {
                *g -= settings.entropy_coef * d / n;
            }
        }
    }
    let mut value_grad = vec![0.0; b];
    for i in 0..b {
        let diff = vc.output[i] - returns[i];
        parts.value_loss += diff * diff / n;
        value_grad[i] = settings.value_coef * 2.0 * diff / n;
    }
    parts.clip_fraction = clipped as f64 / n;
    parts.total_loss =
        parts.policy_loss + settings.value_coef * parts.value_loss - settings.entropy_coef * parts.entropy;
    if !parts.total_loss.is_finite() {
        return Err(AgentError::Numeric("non-finite loss".into()));
    }
    let (gp, _) = policy.backward(&pc, &policy_grad)?;
    let (gv, _) = value.backward(&vc, &value_grad)?;
    Ok((parts, gp, gv))
}

/// Runs `n_epochs` passes of shuffled minibatches over a rollout whose
/// advantages have been computed, with one Adam step per minibatch.
pub fn ppo_update(
    policy: &mut Mlp,
    value: &mut Mlp,
    policy_opt: &mut AdamState,
    value_opt: &mut AdamState,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics, AgentError> {
    if buffer.is_empty() {
        return Err(AgentError::EmptyBuffer);
    }
    let (Some(adv), Some(returns)) = (buffer.advantages(), buffer.returns()) else {
        return Err(AgentError::Length("advantages have not been computed".into()));
    };
    let adv = if config.normalize_advantages {
        normalize(adv)
    } else {
        adv.to_vec()
    };
    let settings = SurrogateSettings {
        clip_range: Some(config.clip_range),
        value_coef: config.value_coef,
        entropy_coef: config.entropy_coef,
    };
    let transitions = buffer.transitions();
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut diag = UpdateDiagnostics::default();
    let mut sum = LossParts::default();
    for _ in 0..config.n_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &transitions[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let (parts, gp, gv) = ppo_loss_and_gradients(policy, value, &batch, &a, &r, &settings)?;
            policy_opt.step(policy, &gp)?;
            value_opt.step(value, &gv)?;
            if diag.minibatches == 0 {
                diag.first = parts;
            }
            diag.minibatches += 1;
            sum.policy_loss += parts.policy_loss;
            sum.value_loss += parts.value_loss;
            sum.entropy += parts.entropy;
            sum.total_loss += parts.total_loss;
            sum.clip_fraction += parts.clip_fraction;
            sum.approx_kl += parts.approx_kl;
            sum.max_ratio_deviation = sum.max_ratio_deviation.max(parts.max_ratio_deviation);
        }
    }
    let m = diag.minibatches as f64;
    diag.mean = LossParts {
        policy_loss: sum.policy_loss / m,
        value_loss: sum.value_loss / m,
        entropy: sum.entropy / m,
        total_loss: sum.total_loss / m,
        clip_fraction: sum.clip_fraction / m,
        approx_kl: sum.approx_kl / m,
        max_ratio_deviation: sum.max_ratio_deviation,
    };
    Ok(diag)
}

#[derive(Clone)]
pub(crate) struct ActorCritic {
    pub policy: Mlp,
    pub value: Mlp,
    pub policy_opt: AdamState,
    pub value_opt: AdamState,
}

impl ActorCritic {
    pub(crate) fn new(
        action_count: usize,
        hidden: &[usize],
        mode: ValueInputMode,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let policy = Mlp::new(
            MlpSizes::new(policy_input_len(action_count), hidden, action_count),
            0.01,
            rng,
        );
        let value = Mlp::new(MlpSizes::new(mode.input_len(action_count), hidden, 1), 1.0, rng);
        let adam = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        Self {
            policy_opt: AdamState::new(&policy, adam),
            value_opt: AdamState::new(&value, adam),
            policy,
            value,
        }
    }

    pub(crate) fn outcome(&self, meta: TrainingMeta, log: TrainingLog) -> TrainOutcome {
        TrainOutcome {
            checkpoint: Checkpoint::new(
                &self.policy,
                Some(&self.value),
                OptimizerState {
                    policy: self.policy_opt.clone(),
                    value: Some(self.value_opt.clone()),
                },
                meta,
            ),
            log,
        }
    }
}

pub(crate) fn check_shaping_gamma(factory: &EnvFactory, gamma: f64) -> Result<(), AgentError> {
    factory.config.validate(&factory.catalog)?;
    if factory.config.shaping.enabled && factory.config.gamma != gamma {
        return Err(AgentError::Config(format!(
            "shaping uses gamma {} but the learner uses {gamma}",
            factory.config.gamma
        )));
    }
    Ok(())
}

pub(crate) struct RunInfo {
    pub algo: Algo,
    pub seed: u64,
    pub total_steps: usize,
    pub value_input_mode: Option<ValueInputMode>,
    pub value_input_len: Option<usize>,
    pub action_count: usize,
    pub config: serde_json::Value,
}

impl RunInfo {
    pub(crate) fn log_meta(&self, factory: &EnvFactory) -> LogMeta {
        LogMeta {
            algo: self.algo,
            seed: self.seed,
            total_steps: self.total_steps,
            shaping: factory.config.shaping.enabled,
            value_input_mode: self.value_input_mode,
            policy_input_len: policy_input_len(self.action_count),
            value_input_len: self.value_input_len,
            action_count: self.action_count,
            catalog_fingerprint: factory.catalog.fingerprint(),
            train_graphs: factory.graphs.len(),
            env: factory.config.clone(),
            config: self.config.clone(),
        }
    }

    pub(crate) fn training_meta(&self, factory: &EnvFactory, steps: usize, updates: usize) -> TrainingMeta {
        TrainingMeta {
            algo: self.algo,
            seed: self.seed,
            steps,
            updates,
            shaping: factory.config.shaping.enabled,
            value_input_mode: self.value_input_mode,
            policy_input_len: policy_input_len(self.action_count),
            value_input_len: self.value_input_len,
            action_count: self.action_count,
            catalog_fingerprint: factory.catalog.fingerprint(),
            env: factory.config.clone(),
        }
    }
}

pub fn ppo_train(factory: &EnvFactory, config: &PpoConfig, seed: u64) -> Result<TrainOutcome, TrainFailure> {
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
        algo: Algo::Ppo,
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
    let per_worker = config.n_steps / config.n_envs;
    let updates = config.total_steps.div_ceil(config.n_steps);
    let mut steps = 0;
    for u in 0..updates {
        let fail = |error, ac: &ActorCritic, log: &TrainingLog, steps| TrainFailure {
            error,
            last_good: Some(Box::new(ac.outcome(info.training_meta(factory, steps, u), log.clone()))),
        };
        let before = ac.clone();
        let result = (|| {
            let (mut buffer, stats) = super::collect_rollout(
                &mut workers,
                &factory.graphs,
                &ac.policy,
                &ac.value,
                config.value_input_mode,
                per_worker,
            )?;
            buffer.compute_gae(config.gamma, config.gae_lambda)?;
            let diag = ppo_update(
                &mut ac.policy,
                &mut ac.value,
                &mut ac.policy_opt,
                &mut ac.value_opt,
                &buffer,
                config,
                &mut rng,
            )?;
            Ok::<_, AgentError>((buffer.len(), stats, diag))
        })();
        let (collected, stats, diag) = match result {
            Ok(r) => r,
            Err(e) => return Err(fail(e, &before, &log, steps)),
        };
        steps += collected;
        let mut record = UpdateRecord::from_episodes(u + 1, steps, &stats);
        record.policy_loss = Some(diag.mean.policy_loss);
        record.value_loss = Some(diag.mean.value_loss);
        record.entropy = Some(diag.mean.entropy);
        record.clip_fraction = Some(diag.mean.clip_fraction);
        record.approx_kl = Some(diag.mean.approx_kl);
        log.records.push(record);
    }
    Ok(ac.outcome(info.training_meta(factory, steps, updates), log))
}
