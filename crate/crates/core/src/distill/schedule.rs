use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class-cycling minibatch planner.
///
/// Classes are visited in a fixed cyclic order that persists across calls, so
/// a class is drawn again only after every other available class has been
/// drawn once. Within a class, reconstructions are taken in index order and
/// wrap around when exhausted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    order: Vec<usize>,
    next_class: usize,
    cursors: BTreeMap<usize, usize>,
}

impl Scheduler {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order, next_class: 0, cursors: BTreeMap::new() }
    }

    /// `batch` reconstruction indices with pairwise-distinct classes.
    pub fn next_batch(&mut self, buckets: &BTreeMap<usize, Vec<usize>>, batch: usize) -> Result<Vec<usize>> {
        let available = self.order.iter().filter(|c| buckets.get(c).is_some_and(|b| !b.is_empty())).count();
        if available < batch {
            return Err(Error::SchedulingFailure(format!("{available} classes available for a batch of {batch}")));
        }
        let mut plan = Vec::with_capacity(batch);
        while plan.len() < batch {
            let class = self.order[self.next_class % self.order.len()];
            self.next_class = (self.next_class + 1) % self.order.len();
            let Some(bucket) = buckets.get(&class).filter(|b| !b.is_empty()) else {
                continue;
            };
            let cursor = self.cursors.entry(class).or_insert(0);
            plan.push(bucket[*cursor % bucket.len()]);
            *cursor += 1;
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buckets(classes: usize, per: usize) -> BTreeMap<usize, Vec<usize>> {
        (0..classes).map(|c| (c, (0..per).map(|i| c * per + i).collect())).collect()
    }

    #[test]
    fn classes_cycle_before_repeating() {
        let b = buckets(10, 5);
        let mut s = Scheduler::new((0..10).collect());
        let mut drawn = Vec::new();
        for _ in 0..20 {
            let plan = s.next_batch(&b, 8).unwrap();
            let classes: Vec<usize> = plan.iter().map(|i| i / 5).collect();
            let mut uniq = classes.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 8);
            drawn.extend(classes);
        }
        for (i, c) in drawn.iter().enumerate() {
            if let Some(j) = drawn[i + 1..].iter().position(|d| d == c) {
                assert!(j + 1 >= 10);
            }
        }
    }

    #[test]
    fn fifo_evicts_a_class_before_it_returns() {
        // Simulate a queue of capacity 8 under the scheduler with 10 classes.
        let b = buckets(10, 3);
        let mut s = Scheduler::new((0..10).collect());
        let mut queue: std::collections::VecDeque<usize> = Default::default();
        for _ in 0..100 {
            let plan = s.next_batch(&b, 8).unwrap();
            for i in &plan {
                queue.push_back(i / 3);
                while queue.len() > 8 {
                    queue.pop_front();
                }
            }
            let mut q: Vec<usize> = queue.iter().copied().collect();
            q.sort();
            q.dedup();
            assert_eq!(q.len(), queue.len(), "duplicate class in queue");
        }
    }

    #[test]
    fn too_few_classes_is_a_scheduling_failure() {
        let b = buckets(5, 2);
        let mut s = Scheduler::new((0..10).collect());
        assert!(matches!(s.next_batch(&b, 8), Err(Error::SchedulingFailure(_))));
    }
}
