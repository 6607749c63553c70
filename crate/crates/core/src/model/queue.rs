use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embedding::Embedding;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO ring of negative embeddings.
///
/// Once full, each push overwrites the slot at the write cursor, which always
/// holds the oldest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingQueue {
    capacity: usize,
    dim: usize,
    slots: Vec<Embedding>,
    cursor: usize,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Argument("queue capacity and dim must be positive".into()));
        }
        Ok(EmbeddingQueue {
            capacity,
            dim,
            slots: Vec::with_capacity(capacity),
            cursor: 0,
        })
    }

    /// Full queue of seeded random unit vectors.
    pub fn random(capacity: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..capacity {
            let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            q.slots.push(Embedding::normalize(&raw)?);
        }
        Ok(q)
    }

    /// Rebuilds a queue from raw slot storage (checkpoint loading).
    pub fn from_parts(
        capacity: usize,
        dim: usize,
        slots: Vec<Embedding>,
        cursor: usize,
    ) -> Result<Self> {
        if slots.len() > capacity || cursor >= capacity.max(1) || slots.iter().any(|e| e.dim() != dim) {
            return Err(Error::Format("inconsistent queue state".into()));
        }
        if slots.len() < capacity && cursor != 0 {
            return Err(Error::Format("partially filled queue must have cursor 0".into()));
        }
        Ok(EmbeddingQueue {
            capacity,
            dim,
            slots,
            cursor,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Slots in storage order (not age order).
    pub fn slots(&self) -> &[Embedding] {
        &self.slots
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        let (newer, older) = if self.slots.len() < self.capacity {
            (&self.slots[..], &self.slots[..0])
        } else {
            let (a, b) = self.slots.split_at(self.cursor);
            (a, b)
        };
        older.iter().chain(newer.iter())
    }

    pub fn push_batch(&mut self, keys: &[Embedding]) -> Result<()> {
        if keys.len() > self.capacity {
            return Err(Error::Argument(format!(
                "batch of {} keys exceeds queue capacity {}",
                keys.len(),
                self.capacity
            )));
        }
        if let Some(bad) = keys.iter().find(|k| k.dim() != self.dim) {
            return Err(Error::Argument(format!(
                "key dim {} does not match queue dim {}",
                bad.dim(),
                self.dim
            )));
        }
        for key in keys {
            if self.slots.len() < self.capacity {
                self.slots.push(key.clone());
            } else {
                self.slots[self.cursor] = key.clone();
                self.cursor = (self.cursor + 1) % self.capacity;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: f64) -> Embedding {
        Embedding::normalize(&[v, 1.0]).unwrap()
    }

    #[test]
    fn full_queue_evicts_oldest() {
        let mut q = EmbeddingQueue::new(4, 2).unwrap();
        q.push_batch(&[e(1.0), e(2.0), e(3.0), e(4.0)]).unwrap();
        q.push_batch(&[e(5.0), e(6.0)]).unwrap();
        assert_eq!(q.len(), 4);
        let got: Vec<_> = q.iter().cloned().collect();
        assert_eq!(got, vec![e(3.0), e(4.0), e(5.0), e(6.0)]);
    }

    #[test]
    fn push_onto_empty() {
        let mut q = EmbeddingQueue::new(8, 2).unwrap();
        q.push_batch(&[e(1.0), e(2.0), e(3.0)]).unwrap();
        assert_eq!(q.len(), 3);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let mut q = EmbeddingQueue::new(2, 2).unwrap();
        assert!(matches!(
            q.push_batch(&[e(1.0), e(2.0), e(3.0)]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn random_queue_is_full_and_unit_norm() {
        let q = EmbeddingQueue::random(16, 8, 3).unwrap();
        assert_eq!(q.len(), 16);
        for v in q.iter() {
            assert!((v.dot(v) - 1.0).abs() < 1e-12);
        }
        assert_eq!(q, EmbeddingQueue::random(16, 8, 3).unwrap());
    }
}
