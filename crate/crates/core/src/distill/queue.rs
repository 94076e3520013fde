use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// One detached photo embedding. `key` identifies the reconstruction it was
/// computed from so positives can be located without comparing floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub key: u64,
    pub class_id: usize,
    pub embedding: Vec<f64>,
}

/// Fixed-capacity FIFO of gradient-free embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends and evicts the oldest entries beyond capacity.
    pub fn push(&mut self, entry: QueueEntry) {
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn position(&self, key: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.key == key)
    }

    pub fn get(&self, i: usize) -> Option<&QueueEntry> {
        self.entries.get(i)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

impl FromIterator<QueueEntry> for EmbeddingQueue {
    fn from_iter<I: IntoIterator<Item = QueueEntry>>(iter: I) -> Self {
        let entries: VecDeque<QueueEntry> = iter.into_iter().collect();
        Self { capacity: entries.len(), entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: u64) -> QueueEntry {
        QueueEntry { key, class_id: key as usize % 3, embedding: vec![key as f64] }
    }

    #[test]
    fn fifo_eviction() {
        let mut q = EmbeddingQueue::new(3);
        for k in 0..5 {
            q.push(entry(k));
            assert_eq!(q.len(), (k as usize + 1).min(3));
        }
        let keys: Vec<u64> = q.iter().map(|e| e.key).collect();
        assert_eq!(keys, vec![2, 3, 4]);
        assert_eq!(q.position(3), Some(1));
        assert_eq!(q.position(0), None);
    }
}
