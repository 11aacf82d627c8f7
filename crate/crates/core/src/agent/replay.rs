use rand::Rng;

use crate::env::{ACTION_DIM, OBS_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: [f32; ACTION_DIM],
    pub reward: f32,
    pub next_obs: Vec<f32>,
    /// True only for terminal states (collisions), never for time limits.
    pub done: bool,
}

/// Column-wise minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub dones: Vec<f32>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let mut b = Batch {
            size: items.len(),
            obs: Vec::with_capacity(items.len() * OBS_DIM),
            actions: Vec::with_capacity(items.len() * ACTION_DIM),
            rewards: Vec::with_capacity(items.len()),
            next_obs: Vec::with_capacity(items.len() * OBS_DIM),
            dones: Vec::with_capacity(items.len()),
        };
        for t in items {
            b.obs.extend_from_slice(&t.obs);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
        }
        b
    }
}

/// FIFO ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), head: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Uniform sample without replacement within the batch.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Batch {
        assert!(batch <= self.len(), "batch {batch} larger than buffer {}", self.len());
        let idx = rand::seq::index::sample(rng, self.len(), batch);
        let picked: Vec<&Transition> = idx.iter().map(|i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f32) -> Transition {
        Transition { obs: vec![r; OBS_DIM], action: [0.0; 2], reward: r, next_obs: vec![r; OBS_DIM], done: false }
    }

    #[test]
    fn overwrite_keeps_fifo_order() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(t(i as f32));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f32> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_seeded_and_without_replacement() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..50 {
            buf.push(t(i as f32));
        }
        let a = buf.sample(50, &mut ChaCha8Rng::seed_from_u64(1));
        let b = buf.sample(50, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let mut r = a.rewards.clone();
        r.sort_by(f32::total_cmp);
        assert_eq!(r, (0..50).map(|i| i as f32).collect::<Vec<_>>());
    }
}
