//! Prioritised experience replay over a ring buffer and a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Complete binary tree whose internal nodes hold the sum of their leaves.
/// Parents are recomputed from their children on every write, so no
/// floating-point drift accumulates.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn get(&self, index: usize) -> f64 {
        self.nodes[self.leaves + index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        debug_assert!(value >= 0.0 && value.is_finite());
        let mut node = self.leaves + index;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, never a zero leaf while
    /// the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut node = 1;
        let mut mass = mass.max(0.0);
        while node < self.leaves {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            if (mass < left && left > 0.0) || right <= 0.0 {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance-sampling weights normalised so the largest is 1.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    next: usize,
    max_priority: f64,
    pub alpha: f64,
    pub priority_eps: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, priority_eps: f64) -> Result<Self> {
        if capacity == 0 || !(alpha >= 0.0) || !(priority_eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "replay buffer needs capacity > 0, alpha >= 0 and eps > 0 (got {capacity}, {alpha}, {priority_eps})"
            )));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            tree: SumTree::new(capacity),
            next: 0,
            max_priority: 1.0,
            alpha,
            priority_eps,
        })
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

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.priorities[index]
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Insert with the largest priority seen so far, overwriting the oldest
    /// entry once full. Returns the slot used.
    pub fn push(&mut self, transition: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(transition);
            self.priorities.push(self.max_priority);
        } else {
            self.items[slot] = transition;
            self.priorities[slot] = self.max_priority;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (slot + 1) % self.capacity;
        slot
    }

    /// Set a raw priority, floored at `priority_eps`.
    pub fn set_priority(&mut self, index: usize, priority: f64) {
        let p = if priority.is_finite() {
            priority.max(self.priority_eps)
        } else {
            self.max_priority
        };
        self.priorities[index] = p;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(index, p.powf(self.alpha));
    }

    /// Priorities become `|δ| + ε_p`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &d) in indices.iter().zip(td_errors) {
            self.set_priority(i, d.abs() + self.priority_eps);
        }
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.tree.get(index) / self.tree.total()
    }

    /// Stratified proportional sampling with importance weights
    /// `(N·P(i))^(−β)` normalised by their maximum.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut impl Rng) -> Result<SampledBatch> {
        if self.is_empty() || batch == 0 {
            return Err(Error::InvalidArgument("cannot sample from an empty buffer".into()));
        }
        let total = self.tree.total();
        let segment = total / batch as f64;
        let n = self.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for k in 0..batch {
            let mass = (k as f64 + rng.random::<f64>()) * segment;
            let i = self.tree.find(mass.min(total)).min(self.len() - 1);
            indices.push(i);
            weights.push((n * self.probability(i)).powf(-beta));
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        weights.iter_mut().for_each(|w| *w /= max);
        Ok(SampledBatch { indices, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(reward: f64) -> Transition {
        Transition {
            state: vec![reward],
            action: vec![0.0],
            reward,
            next_state: vec![reward],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3, 0.6, 1e-3).unwrap();
        for i in 0..4 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(10, 0.6, 1e-3).unwrap();
        for i in 0..7 {
            buf.push(t(i as f64));
        }
        let b = buf.sample(16, 0.4, &mut rng).unwrap();
        assert!(b.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn priority_floor() {
        let mut buf = ReplayBuffer::new(2, 1.0, 1e-3).unwrap();
        buf.push(t(0.0));
        buf.set_priority(0, 0.0);
        assert_eq!(buf.priority(0), 1e-3);
        assert!(buf.probability(0) > 0.0);
    }

    #[test]
    fn find_skips_empty_leaves() {
        let mut tree = SumTree::new(5);
        tree.set(0, 1.0);
        tree.set(2, 3.0);
        assert_eq!(tree.find(0.5), 0);
        assert_eq!(tree.find(1.0), 2);
        assert_eq!(tree.find(3.999), 2);
        assert_eq!(tree.find(4.0), 2);
    }
}
