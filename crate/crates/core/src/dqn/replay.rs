use std::collections::VecDeque;

use rand::Rng;

use crate::env::Experience;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO of experiences with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
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

    /// Appends, evicting the oldest item when full.
    pub fn store(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Indices of `b` independent uniform draws with replacement.
    pub fn sample_indices(&self, b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..b).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, b: usize, rng: &mut impl Rng) -> Result<Vec<&Experience>> {
        Ok(self
            .sample_indices(b, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(r: f64) -> Experience {
        Experience {
            state: vec![r],
            action: ActionId::ShowList,
            reward: r,
            next: vec![r],
            terminal: true,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for r in 1..=3 {
            b.store(exp(r as f64));
        }
        let kept: Vec<f64> = b.iter().map(|e| e.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn size_before_full() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for r in 0..7 {
            b.store(exp(r as f64));
        }
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn sampling_with_replacement() {
        let mut b = ReplayBuffer::new(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(1, &mut rng), Err(Error::EmptyBuffer)));
        b.store(exp(4.0));
        let batch = b.sample(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|e| e.reward == 4.0));
        b.store(exp(5.0));
        for _ in 0..100 {
            let r = b.sample(1, &mut rng).unwrap()[0].reward;
            assert!(r == 4.0 || r == 5.0);
        }
    }

    #[test]
    fn seeded_batches_repeat() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for r in 0..100 {
            b.store(exp(r as f64));
        }
        let a = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, c);
    }
}
