//! Uniform and proportional-priority replay buffers.

use rand::Rng;

use crate::error::{Error, Result};

use super::Transition;

/// Binary sum tree over leaf priorities. Parents are recomputed from their
/// children on every update so sums never drift.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass` (`0 <= mass < total`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if mass < self.nodes[left] || self.nodes[left + 1] == 0.0 {
                node = left;
            } else {
                mass -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct UniformBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl UniformBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            data: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.data.is_empty() {
            return Err(Error::Contract("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.data.len())).collect())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }
}

/// Proportional prioritized replay: `P(i) = p_i^alpha / sum_j p_j^alpha`.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    tree: SumTree,
    pub alpha: f64,
    pub eps: f64,
    max_priority: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Self {
        Self {
            capacity,
            data: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            alpha,
            eps,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Inserts at the current maximum priority so new data is seen at least once.
    pub fn push(&mut self, t: Transition) {
        let slot = self.next;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[slot] = t;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// Raw priority `p_i` (before the `alpha` power).
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i).powf(1.0 / self.alpha.max(f64::MIN_POSITIVE))
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Sets `p_i` directly.
    pub fn set_priority(&mut self, i: usize, p: f64) {
        let p = p.max(self.eps);
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p.powf(self.alpha));
    }

    /// Priority update from TD errors: `p_i = |delta_i| + eps`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &d) in indices.iter().zip(td_errors) {
            self.set_priority(i, d.abs() + self.eps);
        }
    }

    /// Draws `batch_size` indices proportional to `p^alpha` and returns the
    /// importance weights `(N P(i))^-beta`, normalized by their maximum.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<PerBatch> {
        if self.data.is_empty() {
            return Err(Error::Contract("cannot sample from an empty buffer".into()));
        }
        let total = self.tree.total();
        let n = self.data.len() as f64;
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| {
                let i = self.tree.find(rng.random::<f64>() * total);
                i.min(self.data.len() - 1)
            })
            .collect();
        let mut weights: Vec<f64> = indices
            .iter()
            .map(|&i| (n * self.tree.get(i) / total).powf(-beta))
            .collect();
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Ok(PerBatch { indices, weights })
    }
}

/// Replay storage for an agent.
#[derive(Debug, Clone)]
pub enum Replay {
    Uniform(UniformBuffer),
    Prioritized(PrioritizedBuffer),
}

impl Replay {
    pub fn len(&self) -> usize {
        match self {
            Replay::Uniform(b) => b.len(),
            Replay::Prioritized(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, t: Transition) {
        match self {
            Replay::Uniform(b) => b.push(t),
            Replay::Prioritized(b) => b.push(t),
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        match self {
            Replay::Uniform(b) => b.get(i),
            Replay::Prioritized(b) => b.get(i),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<PerBatch> {
        match self {
            Replay::Uniform(b) => Ok(PerBatch {
                indices: b.sample(batch_size, rng)?,
                weights: vec![1.0; batch_size],
            }),
            Replay::Prioritized(b) => b.sample(batch_size, beta, rng),
        }
    }

    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        if let Replay::Prioritized(b) = self {
            b.update_priorities(indices, td_errors);
        }
    }
}
