//! Seeded randomness and small numeric helpers shared across modules.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::graph::Mat;

pub type SeededRng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; distinct streams are independent.
pub fn rng_for(seed: u64, stream: &str) -> SeededRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

pub fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Glorot-style initialisation for a `fan_in x fan_out` weight.
pub fn init_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
    gaussian_mat(rng, fan_in, fan_out) * scale
}

/// `m` distinct timesteps drawn uniformly from `1..=steps`, in draw order.
pub fn sample_timesteps<R: Rng + ?Sized>(rng: &mut R, steps: usize, m: usize) -> Vec<usize> {
    sample(rng, steps, m).into_iter().map(|i| i + 1).collect()
}

pub fn linf(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(f64::MIN_POSITIVE)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Modified Gram-Schmidt on the columns of `m`.
pub fn orthonormalize_columns(m: &mut Mat) {
    let mut t = m.t().as_standard_layout().into_owned();
    orthonormalize_rows(&mut t);
    m.assign(&t.t());
}

/// Modified Gram-Schmidt on the rows of a row-major `m`. Rows that collapse
/// to (numerically) zero are left at zero.
pub fn orthonormalize_rows(m: &mut Mat) {
    let (rows, cols) = m.dim();
    let data = m.as_slice_mut().expect("row-major matrix");
    for j in 0..rows {
        let (done, rest) = data.split_at_mut(j * cols);
        let row = &mut rest[..cols];
        for k in 0..j {
            let prev = &done[k * cols..(k + 1) * cols];
            let proj: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            row.iter_mut().zip(prev).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Adam over a list of parameter matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&s| Mat::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Mat::zeros(s)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// In-place descent step; `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: f64 = rng_for(3, "x").gen();
        let b: f64 = rng_for(3, "x").gen();
        let c: f64 = rng_for(3, "y").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn timesteps_are_distinct_and_in_range() {
        let mut rng = rng_for(1, "t");
        let ts = sample_timesteps(&mut rng, 25, 25);
        let mut sorted = ts.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=25).collect::<Vec<_>>());
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut x = array![[3.0, -2.0]];
        let mut opt = Adam::new(0.1, &[(1, 2)]);
        for _ in 0..500 {
            let g = &x * 2.0;
            opt.step(&mut [&mut x], &[g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn gram_schmidt_gives_orthonormal_columns() {
        let mut m = gaussian_mat(&mut rng_for(0, "gs"), 10, 4);
        orthonormalize_columns(&mut m);
        let gram = m.t().dot(&m);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }
}
