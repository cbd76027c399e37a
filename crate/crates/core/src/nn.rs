//! Small dense networks with hand-written gradients, Adam, and a categorical
//! policy head.
//!
//! Everything is `f64`. Weights are stored row-major as `[inputs x outputs]`
//! so a forward pass is `y = x W + b`. Hidden layers use tanh; the output
//! layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("action {0} out of range for {1} actions")]
    ActionOutOfRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSizes {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSizes {
    pub fn new(input_dim: usize, hidden_dims: impl Into<Vec<usize>>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.into(),
            output_dim,
        }
    }

    fn chain(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend(&self.hidden_dims);
        v.push(self.output_dim);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `[inputs x outputs]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: MlpSizes,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.values_mut().zip(b.values()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers
            .iter_mut()
            .for_each(|l| l.values_mut().for_each(|x| *x *= factor));
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.values())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Activations saved by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    /// Input to each layer: the network input, then each hidden activation.
    inputs: Vec<Vec<f64>>,
    /// Row-major `[batch x output_dim]`.
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn output_row(&self, i: usize) -> &[f64] {
        let d = self.output.len() / self.batch.max(1);
        &self.output[i * d..(i + 1) * d]
    }
}

fn affine(input: &[f64], batch: usize, layer: &Layer, inputs: usize, outputs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * outputs);
    for r in 0..batch {
        out.extend_from_slice(&layer.b);
        let row = &mut out[r * outputs..(r + 1) * outputs];
        for (i, &x) in input[r * inputs..(r + 1) * inputs].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w = &layer.w[i * outputs..(i + 1) * outputs];
            for (o, &wij) in row.iter_mut().zip(w) {
                *o += x * wij;
            }
        }
    }
    out
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. The last layer's weights are
    /// multiplied by `output_gain` (small values give near-uniform policies).
    pub fn new<R: Rng + ?Sized>(sizes: MlpSizes, output_gain: f64, rng: &mut R) -> Self {
        let chain = sizes.chain();
        let n = chain.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (chain[k], chain[k + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let gain = if k + 1 == n { output_gain } else { 1.0 };
                let mut layer = Layer::zeros(fan_in, fan_out);
                for w in &mut layer.w {
                    *w = rng.gen_range(-limit..limit) * gain;
                }
                layer
            })
            .collect();
        Self {
            sizes,
            activation: Activation::Tanh,
            layers,
        }
    }

    pub fn zeros(sizes: MlpSizes) -> Self {
        let chain = sizes.chain();
        let layers = chain.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self {
            sizes,
            activation: Activation::Tanh,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.sizes.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|x| x.is_finite()))
    }

    /// Flat view of every parameter, weights before biases, layer by layer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.values_mut())
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardCache, NnError> {
        let d = self.sizes.input_dim;
        if input.len() != batch * d {
            return Err(NnError::Dimension(format!(
                "expected {batch} x {d} inputs, got {}",
                input.len()
            )));
        }
        let chain = self.sizes.chain();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&current, batch, layer, chain[k], chain[k + 1]);
            if k < last {
                match self.activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardCache {
            batch,
            inputs,
            output: current,
        })
    }

    /// Forward pass for one input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output.clone(), cache))
    }

    /// Output for one input, without keeping a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Reverse-mode gradients of `sum(output_grad * output)` with respect to
    /// the parameters and the inputs.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        let batch = cache.batch;
        if output_grad.len() != cache.output.len() || cache.inputs.len() != self.layers.len() {
            return Err(NnError::Dimension(format!(
                "output gradient has {} values, forward produced {}",
                output_grad.len(),
                cache.output.len()
            )));
        }
        let chain = self.sizes.chain();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let (n_in, n_out) = (chain[k], chain[k + 1]);
            let x = &cache.inputs[k];
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let mut dx = vec![0.0; batch * n_in];
            for r in 0..batch {
                let d = &delta[r * n_out..(r + 1) * n_out];
                for (gb, &dv) in g.b.iter_mut().zip(d) {
                    *gb += dv;
                }
                let xr = &x[r * n_in..(r + 1) * n_in];
                let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                for i in 0..n_in {
                    let w = &layer.w[i * n_out..(i + 1) * n_out];
                    let gw = &mut g.w[i * n_out..(i + 1) * n_out];
                    let xi = xr[i];
                    let mut acc = 0.0;
                    for j in 0..n_out {
                        gw[j] += xi * d[j];
                        acc += d[j] * w[j];
                    }
                    dxr[i] = acc;
                }
            }
            if k > 0 {
                // x is tanh(z) of the previous layer.
                match self.activation {
                    Activation::Tanh => dx.iter_mut().zip(x).for_each(|(g, &a)| *g *= 1.0 - a * a),
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    /// One bias-corrected Adam update of `net` along `-grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        let shapes_match = |g: &Gradients| {
            g.layers.len() == net.layers.len()
                && g.layers
                    .iter()
                    .zip(&net.layers)
                    .all(|(a, b)| a.w.len() == b.w.len() && a.b.len() == b.b.len())
        };
        if !shapes_match(grads) || !shapes_match(&self.first_moment) {
            return Err(NnError::Dimension("gradient shape does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient".into()));
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let params = net.layers.iter_mut().flat_map(|l| l.values_mut());
        let m = self.first_moment.layers.iter_mut().flat_map(|l| l.values_mut());
        let v = self.second_moment.layers.iter_mut().flat_map(|l| l.values_mut());
        for (((p, m), v), &g) in params.zip(m).zip(v).zip(grads.iter()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Categorical distribution over action indices, parameterized by logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: &[f64]) -> Result<Self, NnError> {
        if logits.is_empty() {
            return Err(NnError::Dimension("empty logits".into()));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite("logits".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        Ok(Self {
            log_probs: logits.iter().map(|&l| l - lse).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: usize) -> Result<f64, NnError> {
        self.log_probs
            .get(action)
            .copied()
            .ok_or(NnError::ActionOutOfRange(action, self.log_probs.len()))
    }

    pub fn entropy(&self) -> f64 {
        -self
            .log_probs
            .iter()
            .map(|&l| {
                let p = l.exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * l
                }
            })
            .sum::<f64>()
    }

    /// Inverse-CDF sampling from one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, l) in self.log_probs.iter().enumerate() {
            let p = l.exp();
            if p > 0.0 {
                last_positive = i;
            }
            cum += p;
            if u < cum {
                return i;
            }
        }
        last_positive
    }

    /// Most likely action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.log_probs)
    }

    /// d log p(action) / d logits.
    pub fn log_prob_grad(&self, action: usize) -> Vec<f64> {
        self.log_probs
            .iter()
            .enumerate()
            .map(|(i, l)| f64::from(u8::from(i == action)) - l.exp())
            .collect()
    }

    /// d entropy / d logits.
    pub fn entropy_grad(&self) -> Vec<f64> {
        let h = self.entropy();
        self.log_probs
            .iter()
            .map(|&l| {
                let p = l.exp();
                if p == 0.0 {
                    0.0
                } else {
                    -p * (l + h)
                }
            })
            .collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_output() {
        let net = Mlp::zeros(MlpSizes::new(3, [4], 2));
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(MlpSizes::new(3, [], 3));
        for i in 0..3 {
            net.layers[0].w[i * 3 + i] = 1.0;
        }
        let x = [0.5, -1.5, 2.0];
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn linear_weight_gradient_column_equals_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(MlpSizes::new(4, [], 3), 1.0, &mut rng);
        let x = [0.1, 0.2, -0.3, 0.4];
        let (_, cache) = net.forward(&x).unwrap();
        let (g, _) = net.backward(&cache, &[1.0, 0.0, 0.0]).unwrap();
        for (i, &xi) in x.iter().enumerate() {
            assert_eq!(g.layers[0].w[i * 3], xi);
            assert_eq!(g.layers[0].w[i * 3 + 1], 0.0);
            assert_eq!(g.layers[0].w[i * 3 + 2], 0.0);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(MlpSizes::new(3, [5, 4], 2), 1.0, &mut rng);
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::zeros(MlpSizes::new(3, [2], 1));
        assert!(matches!(net.forward(&[1.0]), Err(NnError::Dimension(_))));
        let (_, cache) = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0, 2.0]), Err(NnError::Dimension(_))));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::new(MlpSizes::new(2, [3], 2), 1.0, &mut rng);
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut net = Mlp::zeros(MlpSizes::new(2, [], 2));
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].w = vec![3.0, -0.5, 1e-3, -7.0];
        g.layers[0].b = vec![2.0, 2.0];
        let mut adam = AdamState::new(
            &net,
            AdamConfig {
                eps: 0.0,
                ..Default::default()
            },
        );
        adam.step(&mut net, &g).unwrap();
        let lr = 3e-4;
        assert_eq!(net.layers[0].w, vec![-lr, lr, -lr, lr]);
        // Equal gradients give equal updates.
        assert_eq!(net.layers[0].b[0], net.layers[0].b[1]);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = Mlp::zeros(MlpSizes::new(1, [], 1));
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].b[0] = f64::NAN;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        assert!(matches!(adam.step(&mut net, &g), Err(NnError::NonFinite(_))));
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn uniform_categorical() {
        let d = Categorical::new(&[0.3; 4]).unwrap();
        assert!((d.log_prob(2).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(d.argmax(), 0);
        assert_eq!(d.log_prob(4), Err(NnError::ActionOutOfRange(4, 4)));
    }

    #[test]
    fn degenerate_categorical() {
        let d = Categorical::new(&[0.0, 1e9, 0.0]).unwrap();
        assert!(d.entropy().abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 1));
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = Categorical::new(&[0.1, -2.0, 3.5]).unwrap();
        let b = Categorical::new(&[100.1, 98.0, 103.5]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let d = Categorical::new(&[0.2, 0.1, -0.4, 1.0]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn sample_frequencies_match_softmax() {
        let d = Categorical::new(&[0.5, -0.25, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(d.probs()) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }
}
