use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DenseMatrix;

/// Seeded, platform-independent random stream.
///
/// Backed by ChaCha8, so a given seed yields the same stream everywhere.
/// Independent substreams are derived by hashing `(seed, path...)` rather
/// than by sharing one generator, which keeps parallel and serial runs
/// bit-identical.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream keyed by `seed` and a path of indices, e.g. `(seed, [sigma_idx, sample_idx])`.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        let mut key = splitmix64(seed);
        for &p in path {
            key = splitmix64(key ^ splitmix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
        }
        Self::new(key)
    }

    /// Child stream derived from this one; advances `self`.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on the closed range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    pub fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| std * self.normal())
    }

    /// Haar-ish random orthogonal matrix: Gram–Schmidt on a Gaussian matrix.
    pub fn orthogonal_matrix(&mut self, n: usize) -> DenseMatrix {
        loop {
            let g = self.normal_matrix(n, n, 1.0);
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
            let mut ok = true;
            for j in 0..n {
                let mut v: Vec<f64> = (0..n).map(|i| g[(i, j)]).collect();
                for _ in 0..2 {
                    for c in &cols {
                        let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                        for (vi, ci) in v.iter_mut().zip(c) {
                            *vi -= dot * ci;
                        }
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    ok = false;
                    break;
                }
                v.iter_mut().for_each(|x| *x /= norm);
                cols.push(v);
            }
            if ok {
                return DenseMatrix::from_fn(n, n, |i, j| cols[j][i]);
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::substream(42, &[1, 2]);
        let mut d = Rng::substream(42, &[2, 1]);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = Rng::new(3).orthogonal_matrix(5);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&DenseMatrix::identity(5)).unwrap().max_abs() < 1e-12);
    }
}
