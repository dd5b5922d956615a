//! Seeded randomness. Every stochastic choice in the crate draws from a
//! ChaCha stream seeded explicitly, so reruns and thread-count changes never
//! alter results.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, Vector};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| normal(rng))
}

/// Gaussian direction normalized to the unit sphere.
pub fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = random_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// `count` unit vectors from one seed, independent of caller state.
pub fn unit_vectors(seed: u64, count: usize, n: usize) -> Vec<Vector> {
    let mut rng = seeded_rng(seed);
    (0..count).map(|_| random_unit_vector(&mut rng, n)).collect()
}

/// Probe set for supremum estimates over the unit sphere: the canonical
/// basis followed by `extra` seeded random unit directions.
pub fn probe_vectors(n: usize, extra: usize, seed: u64) -> Vec<Vector> {
    let mut probes: Vec<Vector> = (0..n)
        .map(|i| Vector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    probes.extend(unit_vectors(seed, extra, n));
    probes
}

/// Base-2 radical inverse of k: 1 -> 0.5, 2 -> 0.25, 3 -> 0.75, ...
/// Low-discrepancy positions in (0,1) without an RNG.
pub fn van_der_corput(mut k: u64) -> f64 {
    let mut x = 0.0;
    let mut f = 0.5;
    while k > 0 {
        if k & 1 == 1 {
            x += f;
        }
        f *= 0.5;
        k >>= 1;
    }
    x
}

/// Symmetric matrix with entries on the order of `scale`.
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = normal(rng) * scale;
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Matrix::from_rows(n, &entries).expect("finite random entries")
}

/// Symmetric positive definite matrix: B^T B / n plus a small ridge.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let b = nalgebra::DMatrix::from_fn(n, n, |_, _| normal(rng) * scale);
    let m = b.transpose() * &b / (n as f64);
    let spd = Matrix::from_dmatrix(m).expect("finite product");
    spd.add_scaled_identity(0.1 * scale * scale)
}
