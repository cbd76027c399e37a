use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use passgym::agents::{
    a2c_loss_and_gradients, collect_rollout, dqn_targets, policy_input_len, ppo_loss_and_gradients, EnvFactory,
    SurrogateSettings, Transition, ValueInputMode, Worker,
};
use passgym::bench::generate_suite;
use passgym::env::EnvConfig;
use passgym::nn::{Categorical, Mlp, MlpSizes};
use passgym::passes::Catalog;

fn toy_transition(action: usize, old_log_prob: f64) -> Transition {
    Transition {
        observation: vec![1.0, -0.5],
        value_input: vec![1.0, -0.5],
        action,
        reward: 0.0,
        base_reward: 0.0,
        next_observation: vec![0.0, 0.0],
        done: true,
        log_prob: old_log_prob,
        value_estimate: 0.0,
        cost_features: [0.0, 0.0],
    }
}

fn toy_nets() -> (Mlp, Mlp) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = Mlp::new(MlpSizes::new(2, vec![3], 2), 1.0, &mut rng);
    let value = Mlp::new(MlpSizes::new(2, vec![3], 1), 1.0, &mut rng);
    (policy, value)
}

fn current_log_prob(policy: &Mlp, t: &Transition) -> f64 {
    let logits = policy.predict(&t.observation).unwrap();
    Categorical::new(&logits).unwrap().log_prob(t.action).unwrap()
}

const CLIPPED: SurrogateSettings = SurrogateSettings {
    clip_range: Some(0.2),
    value_coef: 0.5,
    entropy_coef: 0.0,
};

#[test]
fn clipped_objective_arithmetic() {
    let (policy, value) = toy_nets();
    let lp = current_log_prob(&policy, &toy_transition(0, 0.0));
    let t = toy_transition(0, lp - 1.5f64.ln());
    let (parts, _, _) = ppo_loss_and_gradients(&policy, &value, &[&t], &[1.0], &[0.0], &CLIPPED).unwrap();
    assert!((parts.policy_loss + 1.2).abs() < 1e-12, "{}", parts.policy_loss);
    assert_eq!(parts.clip_fraction, 1.0);

    let (parts, _, _) = ppo_loss_and_gradients(&policy, &value, &[&t], &[-1.0], &[0.0], &CLIPPED).unwrap();
    assert!((parts.policy_loss - 1.5).abs() < 1e-12, "{}", parts.policy_loss);
}

#[test]
fn clipped_sample_has_zero_policy_gradient() {
    let (mut policy, value) = toy_nets();
    let lp = current_log_prob(&policy, &toy_transition(1, 0.0));
    let t = toy_transition(1, lp - 1.5f64.ln());
    let (_, grads, _) = ppo_loss_and_gradients(&policy, &value, &[&t], &[1.0], &[0.0], &CLIPPED).unwrap();
    assert_eq!(grads.max_abs(), 0.0);

    let h = 1e-6;
    let count = policy.parameter_count();
    for k in 0..count {
        let orig = *policy.params_mut().nth(k).unwrap();
        let mut at = |x: f64| {
            *policy.params_mut().nth(k).unwrap() = x;
            ppo_loss_and_gradients(&policy, &value, &[&t], &[1.0], &[0.0], &CLIPPED)
                .unwrap()
                .0
                .policy_loss
        };
        let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
        *policy.params_mut().nth(k).unwrap() = orig;
        assert!(numeric.abs() < 1e-8, "param {k}: {numeric}");
    }

    let (_, grads, _) = ppo_loss_and_gradients(&policy, &value, &[&t], &[-1.0], &[0.0], &CLIPPED).unwrap();
    assert!(grads.max_abs() > 0.0);
}

fn collected() -> (Mlp, Mlp, Vec<Transition>, Vec<f64>, Vec<f64>) {
    let cat = Arc::new(Catalog::standard());
    let graphs = generate_suite(4, (10, 40), 810_000)
        .unwrap()
        .into_iter()
        .map(|b| b.graph)
        .collect();
    let factory = EnvFactory::new(EnvConfig::default(), cat, graphs);
    let actions = factory.action_count().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let policy = Mlp::new(
        MlpSizes::new(policy_input_len(actions), vec![16], actions),
        1.0,
        &mut rng,
    );
    let value = Mlp::new(MlpSizes::new(policy_input_len(actions), vec![16], 1), 1.0, &mut rng);
    let mut workers = Worker::spawn_all(&factory, 3, 4).unwrap();
    let (mut buffer, _) = collect_rollout(
        &mut workers,
        &factory.graphs,
        &policy,
        &value,
        ValueInputMode::ObsOnly,
        24,
    )
    .unwrap();
    buffer.compute_gae(0.99, 0.95).unwrap();
    let adv = buffer.advantages().unwrap().to_vec();
    let ret = buffer.returns().unwrap().to_vec();
    (policy, value, buffer.transitions().to_vec(), adv, ret)
}

#[test]
fn fresh_rollout_has_unit_ratio() {
    let (policy, value, ts, adv, ret) = collected();
    let batch: Vec<&Transition> = ts.iter().collect();
    let (parts, _, _) = ppo_loss_and_gradients(&policy, &value, &batch, &adv, &ret, &CLIPPED).unwrap();
    let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
    assert!((parts.policy_loss + mean_adv).abs() < 1e-12);
    assert_eq!(parts.clip_fraction, 0.0);
    assert!(parts.max_ratio_deviation < 1e-12);
}

#[test]
fn zero_entropy_coefficient_keeps_entropy_out_of_the_loss() {
    let (policy, value, ts, adv, ret) = collected();
    let batch: Vec<&Transition> = ts.iter().collect();
    let (parts, _, _) = ppo_loss_and_gradients(&policy, &value, &batch, &adv, &ret, &CLIPPED).unwrap();
    assert!(parts.entropy > 0.0);
    assert!((parts.total_loss - (parts.policy_loss + 0.5 * parts.value_loss)).abs() < 1e-12);
}

#[test]
fn a2c_zero_advantages_give_zero_policy_gradient() {
    let (policy, value, ts, _, ret) = collected();
    let batch: Vec<&Transition> = ts.iter().collect();
    let zeros = vec![0.0; batch.len()];
    let (parts, gp, gv) = a2c_loss_and_gradients(&policy, &value, &batch, &zeros, &ret, 0.5, 0.0).unwrap();
    assert_eq!(gp.max_abs(), 0.0);
    assert_eq!(parts.policy_loss, 0.0);
    assert!(gv.max_abs() > 0.0);
}

#[test]
fn a2c_matches_unclipped_single_epoch_ppo() {
    let (policy, value, ts, adv, ret) = collected();
    let batch: Vec<&Transition> = ts.iter().collect();
    let unclipped = SurrogateSettings {
        clip_range: None,
        ..CLIPPED
    };
    let (_, ppo_p, ppo_v) = ppo_loss_and_gradients(&policy, &value, &batch, &adv, &ret, &unclipped).unwrap();
    let (_, a2c_p, a2c_v) = a2c_loss_and_gradients(&policy, &value, &batch, &adv, &ret, 0.5, 0.0).unwrap();
    for (a, b) in ppo_p.iter().zip(a2c_p.iter()).chain(ppo_v.iter().zip(a2c_v.iter())) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn dqn_targets_with_zero_gamma_are_rewards() {
    let (_, _, ts, _, _) = collected();
    let batch: Vec<&Transition> = ts.iter().collect();
    let n = batch[0].next_observation.len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = Mlp::new(MlpSizes::new(n, vec![8], 12), 1.0, &mut rng);
    let y = dqn_targets(&target, &batch, 0.0).unwrap();
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    assert_eq!(y, rewards);

    let y = dqn_targets(&target, &batch, 0.9).unwrap();
    for (t, y) in batch.iter().zip(y) {
        let q = target.predict(&t.next_observation).unwrap();
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let want = if t.done { t.reward } else { t.reward + 0.9 * best };
        assert!((y - want).abs() < 1e-12);
    }
}
