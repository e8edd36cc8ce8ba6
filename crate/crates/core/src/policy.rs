//! Softmax-output MLP policy over treatment arms.
//!
//! The network `h: R^p → R^{K+1}` has ReLU hidden layers and a linear output; the
//! stochastic policy is `softmax(h(x))`. Training minimizes the negative empirical value
//! `−(1/B) Σ sᵢᵀ softmax(h(xᵢ))`, where `sᵢ` holds the estimated joint survival of every
//! arm for subject `i`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
struct Layer<T> {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![T::zero(); n_in * n_out],
            bias: vec![T::zero(); n_out],
        }
    }

    fn forward(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(r, &b)| {
            let row = &self.weights[r * self.n_in..(r + 1) * self.n_in];
            row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x)
        }));
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Multilayer perceptron `[p, hidden..., K+1]` with ReLU hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNetwork<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> PolicyNetwork<T> {
    /// All weights and biases zero.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(PolicyNetwork {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))` and zero biases.
    pub fn he_uniform(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let bound = (6.0 / layer.n_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::c(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].n_in];
        dims.extend(self.layers.iter().map(|l| l.n_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_actions(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major) then biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    pub fn from_flat(dims: &[usize], params: &[T]) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.n_params() {
            return Err(Error::Shape { expected: net.n_params(), got: params.len() });
        }
        net.set_flat(params);
        Ok(net)
    }

    fn set_flat(&mut self, params: &[T]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    /// Output logits `h(x)`.
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.forward(&cur, &mut next);
            if i < last {
                relu(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn clip(&mut self, bound: T) {
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = w.max(-bound).min(bound);
            }
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::Precondition(format!("invalid network dimensions {dims:?}")));
    }
    Ok(())
}

/// NaN passes through so divergence is detected downstream.
fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Network with two hidden layers of `width` units: `[p, width, width, K+1]`.
pub fn init_network<T: Scalar>(p: usize, k: usize, width: usize, seed: u64) -> Result<PolicyNetwork<T>> {
    if p == 0 || k == 0 || width == 0 {
        return Err(Error::Precondition(format!("p, K and width must be ≥ 1, got ({p}, {k}, {width})")));
    }
    PolicyNetwork::he_uniform(&[p, width, width, k + 1], seed)
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Treatment distribution `softmax(h(x))`.
pub fn policy<T: Scalar>(net: &PolicyNetwork<T>, x: &[T]) -> Vec<T> {
    softmax(&net.forward(x))
}

/// Recommended arm: argmax of the logits.
pub fn decide<T: Scalar>(net: &PolicyNetwork<T>, x: &[T]) -> usize {
    argmax(&net.forward(x))
}

/// One training example: covariates and the per-arm survival values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySample<T> {
    pub x: Vec<T>,
    pub s: Vec<T>,
}

fn check_sample<T: Scalar>(net: &PolicyNetwork<T>, sample: &PolicySample<T>) -> Result<()> {
    if sample.x.len() != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: sample.x.len() });
    }
    if sample.s.len() != net.n_actions() {
        return Err(Error::Shape { expected: net.n_actions(), got: sample.s.len() });
    }
    Ok(())
}

/// `−(1/|batch|) Σ sᵢᵀ softmax(h(xᵢ))`.
pub fn empirical_value_loss<T: Scalar>(net: &PolicyNetwork<T>, batch: &[PolicySample<T>]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut total = T::zero();
    for sample in batch {
        check_sample(net, sample)?;
        let pi = policy(net, &sample.x);
        total += pi.iter().zip(&sample.s).fold(T::zero(), |a, (&p, &s)| a + p * s);
    }
    Ok(-total / T::c(batch.len() as f64))
}

/// Loss and flattened gradient (same layout as [`PolicyNetwork::to_flat`]) over `batch[idx]`.
pub fn loss_and_gradient<T: Scalar>(
    net: &PolicyNetwork<T>,
    batch: &[PolicySample<T>],
    idx: &[usize],
) -> Result<(T, Vec<T>)> {
    if idx.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let n_layers = net.layers.len();
    let scale = T::one() / T::c(idx.len() as f64);
    let mut grads: Vec<Layer<T>> = net.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
    let mut loss = T::zero();
    // activations[l] is the input to layer l
    let mut activations: Vec<Vec<T>> = vec![Vec::new(); n_layers + 1];
    for &i in idx {
        let sample = &batch[i];
        check_sample(net, sample)?;
        activations[0].clear();
        activations[0].extend_from_slice(&sample.x);
        for (l, layer) in net.layers.iter().enumerate() {
            let (head, tail) = activations.split_at_mut(l + 1);
            layer.forward(&head[l], &mut tail[0]);
            if l + 1 < n_layers {
                relu(&mut tail[0]);
            }
        }
        let pi = softmax(&activations[n_layers]);
        let value = pi.iter().zip(&sample.s).fold(T::zero(), |a, (&p, &s)| a + p * s);
        loss -= value * scale;
        // ∂(−sᵀπ)/∂z_k = −π_k (s_k − sᵀπ)
        let mut delta: Vec<T> = pi.iter().zip(&sample.s).map(|(&p, &s)| -p * (s - value) * scale).collect();
        for l in (0..n_layers).rev() {
            let layer = &net.layers[l];
            let input = &activations[l];
            let g = &mut grads[l];
            for r in 0..layer.n_out {
                let d = delta[r];
                if d == T::zero() {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.n_in..(r + 1) * layer.n_in];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![T::zero(); layer.n_in];
                for r in 0..layer.n_out {
                    let d = delta[r];
                    let row = &layer.weights[r * layer.n_in..(r + 1) * layer.n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                // ReLU derivative: the stored activation is positive exactly where the unit was active
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
        }
    }
    let flat = PolicyNetwork { layers: grads }.to_flat();
    Ok((loss, flat))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Optional bound on every weight and bias, applied after each step.
    pub weight_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            weight_clip: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPolicy<T> {
    pub network: PolicyNetwork<T>,
    /// Full-data loss after each epoch.
    pub loss_trajectory: Vec<T>,
}

/// Minibatch training of `net` on the negative empirical value.
pub fn train<T: Scalar>(
    net: PolicyNetwork<T>,
    data: &[PolicySample<T>],
    cfg: &TrainConfig,
) -> Result<TrainedPolicy<T>> {
    if data.is_empty() {
        return Err(Error::Precondition("no training data".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) {
        return Err(Error::Precondition("epochs and batch size must be positive, learning rate non-negative".into()));
    }
    for sample in data {
        check_sample(&net, sample)?;
    }
    let mut net = net;
    let mut params = net.to_flat();
    let n_params = params.len();
    let lr = T::c(cfg.learning_rate);
    let (b1, b2, eps) = (T::c(cfg.beta1), T::c(cfg.beta2), T::c(cfg.epsilon));
    let mut m = vec![T::zero(); n_params];
    let mut v = vec![T::zero(); n_params];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let all: Vec<usize> = order.clone();
    let mut trajectory = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_gradient(&net, data, chunk)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            step += 1;
            match cfg.optimizer {
                Optimizer::Adam => {
                    let c1 = T::one() - b1.powi(step);
                    let c2 = T::one() - b2.powi(step);
                    for k in 0..n_params {
                        m[k] = b1 * m[k] + (T::one() - b1) * grad[k];
                        v[k] = b2 * v[k] + (T::one() - b2) * grad[k] * grad[k];
                        let m_hat = m[k] / c1;
                        let v_hat = v[k] / c2;
                        params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                Optimizer::Sgd => {
                    for k in 0..n_params {
                        params[k] -= lr * grad[k];
                    }
                }
            }
            net.set_flat(&params);
            if let Some(bound) = cfg.weight_clip {
                net.clip(T::c(bound));
                params = net.to_flat();
            }
        }
        let (epoch_loss, _) = loss_and_gradient(&net, data, &all)?;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trajectory.push(epoch_loss);
    }
    Ok(TrainedPolicy {
        network: net,
        loss_trajectory: trajectory,
    })
}
