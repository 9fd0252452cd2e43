//! Proportional prioritized replay over a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Binary sum tree over `capacity` leaves.
#[derive(Debug, Clone)]
struct SumTree {
    cap: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let cap = capacity.next_power_of_two();
        SumTree {
            cap,
            nodes: vec![0.0; 2 * cap],
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.cap + i]
    }

    fn set(&mut self, i: usize, v: f64) {
        let mut k = self.cap + i;
        self.nodes[k] = v;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`.
    fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.cap {
            let left = self.nodes[2 * k];
            if mass < left {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.cap
    }
}

#[derive(Debug, Clone)]
pub struct ReplaySample<T> {
    pub indices: Vec<usize>,
    /// Importance weights, normalized by the batch maximum.
    pub weights: Vec<f64>,
    pub items: Vec<T>,
}

/// Sampling probability is `p_i^alpha / sum_j p_j^alpha`. New items enter
/// with the largest priority seen so far; at capacity the oldest is evicted.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay<T> {
    capacity: usize,
    alpha: f64,
    eps: f64,
    tree: SumTree,
    items: Vec<T>,
    next: usize,
    max_priority: f64,
}

impl<T: Clone> PrioritizedReplay<T> {
    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Self {
        PrioritizedReplay {
            capacity: capacity.max(1),
            alpha,
            eps,
            tree: SumTree::new(capacity.max(1)),
            items: Vec::with_capacity(capacity),
            next: 0,
            max_priority: 1.0,
        }
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

    pub fn push(&mut self, item: T) {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
    }

    /// Raw priority (before the exponent) of a slot.
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i).powf(1.0 / self.alpha.max(f64::MIN_POSITIVE))
    }

    pub fn sample(&self, batch: usize, beta: f64, rng: &mut impl Rng) -> Result<ReplaySample<T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyReplay);
        }
        let total = self.tree.total();
        let n = self.items.len();
        let seg = total / batch as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for k in 0..batch {
            let mass = (k as f64 + rng.random::<f64>()) * seg;
            let mut i = self.tree.find(mass.min(total * (1.0 - 1e-12)));
            if i >= n {
                i = n - 1;
            }
            let p = self.tree.get(i) / total;
            indices.push(i);
            weights.push((n as f64 * p).powf(-beta));
        }
        let wmax = weights.iter().copied().fold(0.0, f64::max);
        if wmax > 0.0 {
            for w in &mut weights {
                *w /= wmax;
            }
        }
        let items = indices.iter().map(|&i| self.items[i].clone()).collect();
        Ok(ReplaySample {
            indices,
            weights,
            items,
        })
    }

    /// Sets priorities to `|td| + eps`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &td) in indices.iter().zip(td_errors) {
            let p = td.abs() + self.eps;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }

    /// Sets raw priorities directly.
    pub fn set_priorities(&mut self, indices: &[usize], priorities: &[f64]) {
        for (&i, &p) in indices.iter().zip(priorities) {
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_follows_priorities() {
        let mut r = PrioritizedReplay::new(2, 1.0, 0.0);
        r.push(0usize);
        r.push(1usize);
        r.set_priorities(&[0, 1], &[1.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 2];
        for _ in 0..100_000 {
            counts[r.sample(1, 0.4, &mut rng).unwrap().items[0]] += 1;
        }
        let ratio = counts[1] as f64 / counts[0] as f64;
        assert!((ratio / 3.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let mut r = PrioritizedReplay::new(4, 0.0, 0.0);
        for i in 0..4 {
            r.push(i);
        }
        r.set_priorities(&[0, 1, 2, 3], &[1.0, 10.0, 100.0, 1000.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[r.sample(1, 1.0, &mut rng).unwrap().items[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn overflow_drops_oldest() {
        let mut r = PrioritizedReplay::new(3, 0.6, 1e-6);
        for i in 0..5 {
            r.push(i);
        }
        let mut items = r.items().to_vec();
        items.sort();
        assert_eq!(items, vec![2, 3, 4]);
    }

    #[test]
    fn new_items_get_max_priority() {
        let mut r = PrioritizedReplay::new(4, 1.0, 0.0);
        r.push(0);
        r.update_priorities(&[0], &[5.0]);
        r.push(1);
        assert_eq!(r.priority(1), 5.0);
    }

    #[test]
    fn empty_sample_errors() {
        let r: PrioritizedReplay<u8> = PrioritizedReplay::new(4, 0.6, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(r.sample(1, 0.4, &mut rng).is_err());
    }

    #[test]
    fn weights_normalized_by_batch_max() {
        let mut r = PrioritizedReplay::new(8, 0.6, 1e-6);
        for i in 0..8 {
            r.push(i);
        }
        r.update_priorities(&[0, 1, 2], &[0.1, 2.0, 7.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = r.sample(16, 0.4, &mut rng).unwrap();
        let max = s.weights.iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }
}
