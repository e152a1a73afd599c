use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use super::Real;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded, reproducible random source.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child generator keyed by `label`, seeded from a splitmix64
    /// mix of the parent seed and the label. Does not advance `self`, and
    /// nests: `stream(a).stream(b)` differs from `stream(b).stream(a)`.
    pub fn stream(&self, label: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> Real {
        self.inner.gen::<f64>() as Real
    }

    pub fn uniform_range(&mut self, lo: Real, hi: Real) -> Real {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> Real {
        let v: f64 = self.inner.sample(StandardNormal);
        v as Real
    }

    pub fn bernoulli(&mut self, p: Real) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Uniform permutation without fixed points (Sattolo's algorithm yields a
    /// single cycle, which is always a derangement for `n >= 2`).
    pub fn derangement(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        if n < 2 {
            return p;
        }
        for i in (1..n).rev() {
            let j = self.below(i);
            p.swap(i, j);
        }
        p
    }

    /// Glorot-uniform `rows × cols` matrix.
    pub fn glorot(&mut self, rows: usize, cols: usize) -> Tensor {
        let limit = (6.0 / (rows + cols) as Real).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.uniform_range(-limit, limit))
            .collect();
        Tensor::new(&[rows, cols], data).expect("shape matches data")
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: Real) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.normal()).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }
}
