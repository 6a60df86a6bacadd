//! Fenwick tree over nonnegative weights with weighted index sampling.

pub(crate) struct Fenwick {
    tree: Vec<f64>,
    /// Power of two, at least the number of slots in use.
    cap: usize,
}

impl Fenwick {
    pub fn from_weights(w: &[f64]) -> Self {
        let cap = w.len().max(1).next_power_of_two();
        let mut f = Self {
            tree: vec![0.0; cap + 1],
            cap,
        };
        f.rebuild(w);
        f
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Linear-time rebuild; grows when `w` does not fit.
    pub fn rebuild(&mut self, w: &[f64]) {
        if w.len() > self.cap {
            self.cap = w.len().next_power_of_two();
            self.tree = vec![0.0; self.cap + 1];
        }
        self.tree.iter_mut().for_each(|v| *v = 0.0);
        for (i, &x) in w.iter().enumerate() {
            self.tree[i + 1] = x;
        }
        for i in 1..=self.cap {
            let j = i + (i & i.wrapping_neg());
            if j <= self.cap {
                self.tree[j] += self.tree[i];
            }
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k <= self.cap {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)`, where
    /// `prefix(i)` sums slots `0..i`. Clamped to `len - 1`.
    #[inline]
    pub fn find(&self, mut target: f64, len: usize) -> usize {
        let mut pos = 0;
        let mut step = self.cap;
        while step > 0 {
            let next = pos + step;
            if next <= self.cap && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(len.saturating_sub(1))
    }

    #[cfg(test)]
    pub fn prefix(&self, i: usize) -> f64 {
        let mut k = i;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }
}
