//! Fixed-capacity history of generated images for discriminator updates.

use alloc::vec::Vec;

use rand::Rng;

/// Once full, each query returns the incoming item with probability ½ and
/// otherwise swaps it with a uniformly chosen stored item and returns that.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn from_items(capacity: usize, mut items: Vec<T>) -> Self {
        items.truncate(capacity);
        Self { capacity, items }
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

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn query<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) -> T {
        if self.capacity == 0 {
            return item;
        }
        if self.items.len() < self.capacity {
            self.items.push(item.clone());
            return item;
        }
        if rng.random::<f64>() < 0.5 {
            let idx = rng.random_range(0..self.items.len());
            core::mem::replace(&mut self.items[idx], item)
        } else {
            item
        }
    }
}
