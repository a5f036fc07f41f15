//! Wall-clock scaling of descriptor extraction when probes and frames double.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{kernelized_covariance, KernelSpec, TrialMatrix};
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub probes: usize,
    pub frames: usize,
    pub runs: usize,
    pub base: Duration,
    pub doubled: Duration,
}

impl EnvelopeReport {
    /// Mean time at `(2m, 2T)` over mean time at `(m, T)`.
    pub fn ratio(&self) -> f64 {
        self.doubled.as_secs_f64() / self.base.as_secs_f64()
    }
}

fn random_trial(d: usize, t: usize, rng: &mut ChaCha8Rng) -> Result<TrialMatrix> {
    // Values in [-0.5, 0.5] keep exp-dot far from overflow.
    let data = (0..d * t).map(|_| rng.random_range(-0.5..0.5)).collect();
    TrialMatrix::new(Matrix::from_vec(d, t, data)?)
}

fn mean_time(kernel: &KernelSpec, x: &TrialMatrix, m: usize, runs: usize) -> Result<Duration> {
    kernelized_covariance(kernel, x, m)?;
    let start = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(kernelized_covariance(kernel, std::hint::black_box(x), m)?);
    }
    Ok(start.elapsed() / runs as u32)
}

/// Mean kernelized-covariance time with `m` probes on a `m × T` trial
/// versus `2m` probes on a `2m × 2T` trial.
pub fn measure(kernel: &KernelSpec, m: usize, t: usize, runs: usize, seed: u64) -> Result<EnvelopeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = random_trial(m, t, &mut rng)?;
    let large = random_trial(2 * m, 2 * t, &mut rng)?;
    Ok(EnvelopeReport {
        probes: m,
        frames: t,
        runs,
        base: mean_time(kernel, &small, m, runs)?,
        doubled: mean_time(kernel, &large, 2 * m, runs)?,
    })
}
