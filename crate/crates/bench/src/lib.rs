//! Seeded inputs shared by the benchmarks.

use kcov::{Matrix, SymMatrix, TrialMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn trial(dim: usize, frames: usize, seed: u64) -> TrialMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dim * frames).map(|_| rng.random_range(-0.5..0.5)).collect();
    TrialMatrix::new(Matrix::from_vec(dim, frames, data).unwrap()).unwrap()
}

/// `B·Bᵀ + I` for a random `dim × dim` matrix `B`.
pub fn spd(dim: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Matrix::from_vec(dim, dim, (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    SymMatrix::from_matrix(&b.matmul(&b.transpose()).unwrap()).unwrap().add_diagonal(1.0)
}

/// Three Gaussian blobs of log matrices with labels 1..=3.
pub fn labelled_logs(per_class: usize, dim: usize, seed: u64) -> (Vec<SymMatrix>, Vec<i32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::new();
    let mut labels = Vec::new();
    for class in 0..3 {
        for _ in 0..per_class {
            let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
            for i in 0..dim {
                for j in i..dim {
                    let centre = if i == j && i % 3 == class { 1.0 } else { 0.0 };
                    upper.push(centre + 0.3 * rng.random_range(-1.0..1.0));
                }
            }
            let m = SymMatrix::from_upper(dim, &upper).unwrap();
            logs.push(m);
            labels.push(class as i32 + 1);
        }
    }
    (logs, labels)
}
