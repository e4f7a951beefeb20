use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Grads, Mlp, Optimizer};

/// Q-network with one output per `(action level, message)` pair.
/// The flat index of `(a, m)` is `a * messages + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub mlp: Mlp,
    pub levels: usize,
    pub messages: usize,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], levels: usize, messages: usize, rng: &mut R) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(levels * messages);
        Self {
            mlp: Mlp::new(&sizes, rng),
            levels,
            messages,
        }
    }

    pub fn joint_size(&self) -> usize {
        self.levels * self.messages
    }

    pub fn joint_index(&self, action: usize, message: usize) -> usize {
        action * self.messages + message
    }

    pub fn split_index(&self, joint: usize) -> (usize, usize) {
        (joint / self.messages, joint % self.messages)
    }

    pub fn q_forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward_one(features)
    }

    /// Epsilon-greedy joint selection, returning `(action_index, message_index)`.
    pub fn select<R: Rng + ?Sized>(&self, features: &[f64], epsilon: f64, rng: &mut R) -> Result<(usize, usize)> {
        let q = self.q_forward(features)?;
        Ok(self.split_index(select_joint(&q, epsilon, rng)))
    }

    /// Epsilon-greedy action for an already committed message.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        message: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let q = self.q_forward(features)?;
        if rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.levels));
        }
        let column: Vec<f64> = (0..self.levels).map(|a| q[self.joint_index(a, message)]).collect();
        Ok(argmax(&column))
    }

    pub fn sync_target(&self) -> QNetwork {
        self.clone()
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniform flat index, otherwise the argmax.
pub fn select_joint<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Minibatch for a TD step. `joint[i]` is the flat `(action, message)` index taken.
#[derive(Debug, Clone)]
pub struct TdBatch {
    pub features: Array2<f64>,
    pub joint: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_features: Array2<f64>,
    pub terminal: Vec<bool>,
    pub weights: Vec<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }
}

/// Bootstrapped targets `y = r + gamma * max Q_target(s')`, or `r` when terminal.
pub fn td_targets(target: &QNetwork, batch: &TdBatch, gamma: f64) -> Result<Vec<f64>> {
    let next_q = target.mlp.forward(batch.next_features.view())?;
    Ok((0..batch.len())
        .map(|i| {
            if batch.terminal[i] {
                batch.rewards[i]
            } else {
                let best = next_q.row(i).iter().cloned().fold(f64::MIN, f64::max);
                batch.rewards[i] + gamma * best
            }
        })
        .collect())
}

/// Weighted mean squared TD loss against fixed targets, its parameter
/// gradients, and the TD errors `Q - y`.
pub fn td_loss_and_grads(net: &QNetwork, batch: &TdBatch, targets: &[f64]) -> Result<(f64, Grads, Vec<f64>)> {
    let cache = net.mlp.forward_cached(batch.features.view())?;
    let q = cache.output();
    let b = batch.len() as f64;
    let mut grad_out = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let j = batch.joint[i];
        if j >= net.joint_size() {
            return Err(Error::Shape {
                expected: net.joint_size(),
                got: j,
            });
        }
        let delta = q[[i, j]] - targets[i];
        errors.push(delta);
        loss += batch.weights[i] * delta * delta / b;
        grad_out[[i, j]] = 2.0 * batch.weights[i] * delta / b;
    }
    let (grads, _) = net.mlp.backward(&cache, grad_out.view());
    Ok((loss, grads, errors))
}

/// One semi-gradient step on the weighted squared TD error. Returns the TD
/// errors measured before the step.
pub fn td_update(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &TdBatch,
    gamma: f64,
    lr: f64,
    optimizer: &mut Optimizer,
    grad_clip: Option<f64>,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("TD batch is empty".into()));
    }
    let targets = td_targets(target, batch, gamma)?;
    let (loss, mut grads, errors) = td_loss_and_grads(net, batch, &targets)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence {
            episode: None,
            message: format!("TD loss is not finite ({loss})"),
        });
    }
    if let Some(c) = grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    optimizer.step(&mut net.mlp, &grads, lr);
    Ok(errors)
}
