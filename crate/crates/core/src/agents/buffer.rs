use rand::Rng;

use super::AgentError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Policy input of the state the action was taken in.
    pub observation: Vec<f64>,
    pub value_input: Vec<f64>,
    pub action: usize,
    /// Reward the learner sees (shaped when shaping is on).
    pub reward: f64,
    pub base_reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
    pub log_prob: f64,
    pub value_estimate: f64,
    /// Flop and transcendental counts after the step.
    pub cost_features: [f64; 2],
}

/// `A_t = sum_k (gamma*lambda)^k delta_{t+k}`, truncated at episode ends.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let n = rewards.len();
    if n == 0 || values.len() != n || dones.len() != n {
        return Err(AgentError::Length(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// On-policy storage. Holds one contiguous segment per worker so advantages
/// can be bootstrapped from each worker's last value.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    capacity: usize,
    transitions: Vec<Transition>,
    segments: Vec<(usize, usize, f64)>,
    advantages: Option<Vec<f64>>,
    returns: Option<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Appends one worker's consecutive transitions. `last_value` estimates
    /// the state after the final transition.
    pub fn push_segment(&mut self, segment: Vec<Transition>, last_value: f64) -> Result<(), AgentError> {
        if self.len() + segment.len() > self.capacity {
            return Err(AgentError::Length(format!(
                "segment of {} overflows capacity {}",
                segment.len(),
                self.capacity
            )));
        }
        let start = self.len();
        self.transitions.extend(segment);
        self.segments.push((start, self.len(), last_value));
        self.advantages = None;
        self.returns = None;
        Ok(())
    }

    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) -> Result<(), AgentError> {
        if self.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let mut advantages = Vec::with_capacity(self.len());
        let mut returns = Vec::with_capacity(self.len());
        for &(start, end, last_value) in &self.segments {
            if start == end {
                continue;
            }
            let seg = &self.transitions[start..end];
            let rewards: Vec<f64> = seg.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = seg.iter().map(|t| t.value_estimate).collect();
            let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
            let (a, r) = compute_gae(&rewards, &values, &dones, last_value, gamma, lambda)?;
            advantages.extend(a);
            returns.extend(r);
        }
        self.advantages = Some(advantages);
        self.returns = Some(returns);
        Ok(())
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn returns(&self) -> Option<&[f64]> {
        self.returns.as_deref()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.segments.clear();
        self.advantages = None;
        self.returns = None;
    }
}

/// Rescales to mean 0 and standard deviation 1. Constant inputs only get
/// centered.
pub(crate) fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    values
        .iter()
        .map(|v| if std > 1e-12 { (v - mean) / std } else { v - mean })
        .collect()
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts an item, overwriting the oldest once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `batch` items drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        if self.items.is_empty() {
            return vec![];
        }
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}
