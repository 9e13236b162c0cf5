use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Checkpoint;

/// Binary sum tree over leaf priorities (leaves padded to a power of two).
#[derive(Debug, Clone, PartialEq)]
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

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass` (clamped into `[0, total)`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// One stored step; vectors are raw observations and normalized actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

/// Sampled minibatch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub s2: Vec<f64>,
    pub done: Vec<f64>,
}

/// Ring buffer with proportional prioritized sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PerBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    len: usize,
    next: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    s2: Vec<f64>,
    done: Vec<f64>,
    /// Raw priorities (before the exponent).
    priority: Vec<f64>,
    tree: SumTree,
    max_priority: f64,
    pub alpha: f64,
}

pub const PRIORITY_EPS: f64 = 1e-6;

impl PerBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Config("priority exponent must be nonnegative".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            len: 0,
            next: 0,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s2: Vec::new(),
            done: Vec::new(),
            priority: Vec::new(),
            tree: SumTree::new(capacity),
            max_priority: 1.0,
            alpha,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priority[i]
    }

    /// Sampling probability of slot `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Inserts at the current maximum priority, overwriting the oldest entry when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.obs_dim || t.s2.len() != self.obs_dim || t.a.len() != self.act_dim {
            return Err(Error::Shape("transition does not match buffer dimensions".into()));
        }
        let i = self.next;
        let put = |dst: &mut Vec<f64>, src: &[f64], w: usize| {
            if dst.len() < (i + 1) * w {
                dst.extend_from_slice(src);
            } else {
                dst[i * w..(i + 1) * w].copy_from_slice(src);
            }
        };
        put(&mut self.s, &t.s, self.obs_dim);
        put(&mut self.a, &t.a, self.act_dim);
        put(&mut self.s2, &t.s2, self.obs_dim);
        put(&mut self.r, &[t.r], 1);
        put(&mut self.done, &[if t.done { 1.0 } else { 0.0 }], 1);
        put(&mut self.priority, &[self.max_priority], 1);
        self.tree.set(i, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Stratified proportional sample with importance weights `(N P(i))^-beta`
    /// divided by the largest weight in the batch.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, beta: f64, rng: &mut R) -> Result<Batch> {
        if size == 0 || self.len < size {
            return Err(Error::Range(format!(
                "buffer holds {} transitions, batch needs {size}",
                self.len
            )));
        }
        let total = self.tree.total();
        let seg = total / size as f64;
        let mut b = Batch {
            size,
            indices: Vec::with_capacity(size),
            weights: Vec::with_capacity(size),
            s: Vec::with_capacity(size * self.obs_dim),
            a: Vec::with_capacity(size * self.act_dim),
            r: Vec::with_capacity(size),
            s2: Vec::with_capacity(size * self.obs_dim),
            done: Vec::with_capacity(size),
        };
        for k in 0..size {
            let u: f64 = rng.random();
            let mass = (seg * (k as f64 + u)).min(total * (1.0 - 1e-12));
            let i = self.tree.find(mass).min(self.len - 1);
            b.indices.push(i);
            let p = self.tree.get(i) / total;
            b.weights.push((self.len as f64 * p).powf(-beta));
            let (o, a) = (self.obs_dim, self.act_dim);
            b.s.extend_from_slice(&self.s[i * o..(i + 1) * o]);
            b.a.extend_from_slice(&self.a[i * a..(i + 1) * a]);
            b.s2.extend_from_slice(&self.s2[i * o..(i + 1) * o]);
            b.r.push(self.r[i]);
            b.done.push(self.done[i]);
        }
        let wmax = b.weights.iter().cloned().fold(0.0, f64::max);
        b.weights.iter_mut().for_each(|w| *w /= wmax);
        Ok(b)
    }

    /// Sets priorities to `|td| + eps` for the sampled slots.
    pub fn update_priorities(&mut self, indices: &[usize], td: &[f64]) -> Result<()> {
        if indices.len() != td.len() {
            return Err(Error::Shape("indices and errors differ in length".into()));
        }
        for (&i, &e) in indices.iter().zip(td) {
            if i >= self.len {
                return Err(Error::Range(format!("slot {i} is empty")));
            }
            let p = if e.is_finite() { e.abs() + PRIORITY_EPS } else { self.max_priority };
            self.priority[i] = p;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
        Ok(())
    }

    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        ck.set_meta(&format!("{prefix}.shape"), format!("{} {} {}", self.capacity, self.obs_dim, self.act_dim))?;
        ck.set_meta(&format!("{prefix}.cursor"), format!("{} {}", self.len, self.next))?;
        ck.put_vec(&format!("{prefix}.scalars"), &[self.alpha, self.max_priority])?;
        for (name, v) in [
            ("s", &self.s),
            ("a", &self.a),
            ("r", &self.r),
            ("s2", &self.s2),
            ("done", &self.done),
            ("priority", &self.priority),
        ] {
            ck.put_vec(&format!("{prefix}.{name}"), v)?;
        }
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let nums = |key: &str| -> Result<Vec<usize>> {
            ck.meta(key)?
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("bad {key}"))))
                .collect()
        };
        let shape = nums(&format!("{prefix}.shape"))?;
        let cursor = nums(&format!("{prefix}.cursor"))?;
        if shape.len() != 3 || cursor.len() != 2 {
            return Err(Error::Checkpoint(format!("{prefix}: malformed buffer header")));
        }
        let sc: Vec<f64> = ck.get_vec(&format!("{prefix}.scalars"))?;
        let mut buf = Self::new(shape[0], shape[1], shape[2], sc[0])?;
        buf.len = cursor[0];
        buf.next = cursor[1];
        buf.max_priority = sc[1];
        buf.s = ck.get_vec(&format!("{prefix}.s"))?;
        buf.a = ck.get_vec(&format!("{prefix}.a"))?;
        buf.r = ck.get_vec(&format!("{prefix}.r"))?;
        buf.s2 = ck.get_vec(&format!("{prefix}.s2"))?;
        buf.done = ck.get_vec(&format!("{prefix}.done"))?;
        buf.priority = ck.get_vec(&format!("{prefix}.priority"))?;
        if buf.priority.len() != buf.len || buf.r.len() != buf.len || buf.s.len() != buf.len * buf.obs_dim {
            return Err(Error::Checkpoint(format!("{prefix}: stored arrays do not match length")));
        }
        for i in 0..buf.len {
            let p = buf.priority[i].powf(buf.alpha);
            buf.tree.set(i, p);
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64) -> Transition {
        Transition {
            s: vec![x, x],
            a: vec![x],
            r: x,
            s2: vec![x + 1.0, x + 1.0],
            done: false,
        }
    }

    #[test]
    fn equal_priorities_sample_uniformly_with_unit_weights() {
        let mut b = PerBuffer::new(8, 2, 1, 0.6).unwrap();
        for i in 0..8 {
            b.push(tr(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 8];
        for _ in 0..2000 {
            let s = b.sample(4, 0.4, &mut rng).unwrap();
            assert!(s.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
            s.indices.iter().for_each(|&i| counts[i] += 1);
        }
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 150.0, "{counts:?}");
        }
    }

    #[test]
    fn single_entry_is_always_drawn() {
        let mut b = PerBuffer::new(4, 2, 1, 0.6).unwrap();
        b.push(tr(3.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(1, 1.0, &mut rng).unwrap();
        assert_eq!((s.indices[0], s.weights[0], s.r[0]), (0, 1.0, 3.0));
        assert!(b.sample(2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn probabilities_follow_priorities() {
        let mut b = PerBuffer::new(2, 2, 1, 1.0).unwrap();
        b.push(tr(0.0)).unwrap();
        b.push(tr(1.0)).unwrap();
        b.update_priorities(&[0, 1], &[3.0 - PRIORITY_EPS, 1.0 - PRIORITY_EPS]).unwrap();
        assert!((b.probability(0) - 0.75).abs() < 1e-12);
        assert!((b.probability(1) - 0.25).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut zero = 0;
        for _ in 0..20000 {
            let s = b.sample(1, 1.0, &mut rng).unwrap();
            zero += usize::from(s.indices[0] == 0);
        }
        assert!((zero as f64 / 20000.0 - 0.75).abs() < 0.015);
    }

    #[test]
    fn new_entries_take_max_priority() {
        let mut b = PerBuffer::new(3, 2, 1, 0.6).unwrap();
        b.push(tr(0.0)).unwrap();
        b.update_priorities(&[0], &[5.0]).unwrap();
        b.push(tr(1.0)).unwrap();
        assert_eq!(b.priority(1), 5.0 + PRIORITY_EPS);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut b = PerBuffer::new(3, 2, 1, 0.6).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64)).unwrap();
        }
        b.update_priorities(&[1], &[0.25]).unwrap();
        let mut ck = Checkpoint::new();
        b.save_to(&mut ck, "buf").unwrap();
        let back = PerBuffer::load_from(&Checkpoint::parse(&ck.to_text()).unwrap(), "buf").unwrap();
        assert_eq!(back, b);
    }

    proptest! {
        #[test]
        fn buffer_conservation(cap in 1usize..20, k in 0usize..60) {
            let mut b = PerBuffer::new(cap, 2, 1, 0.6).unwrap();
            for i in 0..k {
                b.push(tr(i as f64)).unwrap();
            }
            prop_assert_eq!(b.len(), k.min(cap));
            prop_assert!((0..b.len()).all(|i| b.priority(i) > 0.0));
            if !b.is_empty() {
                let total: f64 = (0..b.len()).map(|i| b.probability(i)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
