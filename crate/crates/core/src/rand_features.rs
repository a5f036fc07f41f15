//! Random Maclaurin feature maps for dot-product kernels.
//!
//! Each feature draws a degree `N` with probability `P(N)`, then `N`
//! Rademacher vectors `ω_1..ω_N`, and evaluates
//! `sqrt(a_N / P(N)) · Π_j ⟨ω_j, x⟩`. Because `E[ω_i ω_j] = δ_ij`, the
//! product of two features has expectation `a_N ⟨x, z⟩^N / P(N)` given `N`,
//! and averaging over the degree law recovers `k(x, z)`.
//!
//! With base `p = 2` and a kernel whose coefficients are all positive,
//! `P(N) = 2^{-(N+1)}` and the scale is `sqrt(a_N · 2^{N+1})`. Degrees whose
//! coefficient vanishes are never drawn; `P` is renormalized over the
//! remaining support so the estimator stays unbiased.
//!
//! This is a validator for the exact descriptor path, not part of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::KernelSpec;
use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 2.0;

/// Degrees beyond this carry less than `p^{-CUTOFF}` probability mass and
/// are ignored when renormalizing infinite-support laws.
const NORMALIZATION_CUTOFF: u32 = 256;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `index` derived from a base seed.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index))
}

/// Geometric degree law `∝ p^{-(n+1)}` restricted to degrees with a nonzero
/// kernel coefficient.
#[derive(Debug, Clone)]
pub struct DegreeLaw {
    kernel: KernelSpec,
    base: f64,
    /// Renormalizer over the support.
    mass: f64,
    /// `(degree, cumulative probability)` for finite supports.
    finite_cdf: Option<Vec<(u32, f64)>>,
}

impl DegreeLaw {
    pub fn new(kernel: KernelSpec, base: f64) -> Result<Self> {
        kernel.validate()?;
        if !(base > 1.0) || !base.is_finite() {
            return Err(Error::InvalidBase(base));
        }
        let raw = |n: u32| (base - 1.0) * base.powi(-(n as i32 + 1));
        let (mass, finite_cdf) = match kernel.max_degree() {
            Some(max) => {
                let support: Vec<u32> = (0..=max).filter(|&n| kernel.coefficient(n) > 0.0).collect();
                let mass: f64 = support.iter().map(|&n| raw(n)).sum();
                let mut acc = 0.0;
                let cdf = support
                    .iter()
                    .map(|&n| {
                        acc += raw(n) / mass;
                        (n, acc)
                    })
                    .collect();
                (mass, Some(cdf))
            }
            None => {
                let missing: f64 = (0..NORMALIZATION_CUTOFF)
                    .filter(|&n| kernel.coefficient(n) == 0.0)
                    .map(raw)
                    .sum();
                (1.0 - missing, None)
            }
        };
        if !(mass > 0.0) {
            return Err(Error::InvalidKernel(format!("{kernel} has no positive coefficient")));
        }
        Ok(DegreeLaw {
            kernel,
            base,
            mass,
            finite_cdf,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// `1/p^{N+1}` only sums to one at `p = 2`; other bases are renormalized.
    pub fn is_subnormalized_base(&self) -> bool {
        self.base != 2.0
    }

    pub fn probability(&self, n: u32) -> f64 {
        if self.kernel.coefficient(n) == 0.0 {
            return 0.0;
        }
        (self.base - 1.0) * self.base.powi(-(n as i32 + 1)) / self.mass
    }

    /// `sqrt(a_N / P(N))`.
    pub fn scale(&self, n: u32) -> f64 {
        (self.kernel.coefficient(n) / self.probability(n)).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if let Some(cdf) = &self.finite_cdf {
            let u: f64 = rng.random();
            return cdf
                .iter()
                .find(|&&(_, c)| u < c)
                .map_or(cdf.last().unwrap().0, |&(n, _)| n);
        }
        loop {
            // Inverse CDF of P(N >= n) = p^{-n}; u in (0, 1].
            let u = 1.0 - rng.random::<f64>();
            let n = (-u.ln() / self.base.ln()).floor();
            let n = if n >= u32::MAX as f64 { u32::MAX } else { n as u32 };
            if self.kernel.coefficient(n) > 0.0 {
                return n;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub degree: u32,
    /// `degree` sign vectors of length `d`, row-major.
    pub signs: Vec<i8>,
    pub scale: f64,
}

impl FeatureRecord {
    pub fn sign_vector(&self, j: usize, d: usize) -> &[i8] {
        &self.signs[j * d..(j + 1) * d]
    }

    /// `scale · Π_j ⟨ω_j, x⟩`, without the `1/√M` prefactor.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut prod = self.scale;
        for j in 0..self.degree as usize {
            let dot: f64 = self
                .sign_vector(j, d)
                .iter()
                .zip(x)
                .map(|(&s, &v)| if s > 0 { v } else { -v })
                .sum();
            prod *= dot;
        }
        prod
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub base: f64,
    pub seed: u64,
    pub features: Vec<FeatureRecord>,
}

impl RandomFeatureMap {
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }
}

pub fn sample_map(kernel: &KernelSpec, d: usize, m: usize, p: f64, seed: u64) -> Result<RandomFeatureMap> {
    let law = DegreeLaw::new(*kernel, p)?;
    if d == 0 || m == 0 {
        return Err(Error::InvalidConfig("feature map needs d >= 1 and M >= 1".into()));
    }
    if law.is_subnormalized_base() {
        log::debug!("degree-law base {p} is renormalized; 1/p^(N+1) sums to 1 only at p = 2");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..m)
        .map(|_| {
            let degree = law.sample(&mut rng);
            let signs = (0..degree as usize * d)
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect();
            FeatureRecord {
                degree,
                signs,
                scale: law.scale(degree),
            }
        })
        .collect();
    Ok(RandomFeatureMap {
        kernel: *kernel,
        dim: d,
        base: p,
        seed,
        features,
    })
}

/// `Ψ(x) = (1/√M) [Ψ_1(x), …, Ψ_M(x)]`.
pub fn apply_map(map: &RandomFeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != map.dim {
        return Err(Error::DimMismatch {
            expected: map.dim,
            found: x.len(),
        });
    }
    let norm = 1.0 / (map.feature_count() as f64).sqrt();
    Ok(map.features.iter().map(|f| norm * f.eval(x)).collect())
}

/// Counts of `draws` sampled degrees, one bin per degree up to the largest
/// drawn.
pub fn degree_histogram(law: &DegreeLaw, draws: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Vec<u64> = Vec::new();
    for _ in 0..draws {
        let n = law.sample(&mut rng) as usize;
        if n >= bins.len() {
            bins.resize(n + 1, 0);
        }
        bins[n] += 1;
    }
    bins
}

/// Bins among the first `max_bin + 1` whose count deviates from the
/// law's expectation by more than `z` binomial standard errors.
pub fn degree_histogram_outliers(law: &DegreeLaw, bins: &[u64], max_bin: usize, z: f64) -> Vec<usize> {
    let total: u64 = bins.iter().sum();
    (0..=max_bin)
        .filter(|&n| {
            let p = law.probability(n as u32);
            let expected = total as f64 * p;
            let se = (total as f64 * p * (1.0 - p)).sqrt();
            let got = bins.get(n).copied().unwrap_or(0) as f64;
            (got - expected).abs() > z * se.max(f64::MIN_POSITIVE)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub target: f64,
    pub estimate_mean: f64,
    pub estimate_stderr: f64,
    pub replicates: usize,
    pub within_3se: bool,
}

/// Minimum replicate count for a meaningful standard error.
pub const MIN_REPLICATES: usize = 30;

/// Per-replicate estimates `⟨Ψ_r(x), Ψ_r(z)⟩`, replicate `r` seeded by
/// [`replicate_seed`]. Order is independent of thread scheduling.
pub fn replicate_estimates(
    kernel: &KernelSpec,
    x: &[f64],
    z: &[f64],
    m: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.len() != z.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let map = sample_map(kernel, x.len(), m, DEFAULT_BASE, replicate_seed(seed, r))?;
            let px = apply_map(&map, x)?;
            let pz = apply_map(&map, z)?;
            let v: f64 = px.iter().zip(&pz).map(|(a, b)| a * b).sum();
            if !v.is_finite() {
                return Err(Error::NonFinite("feature-map estimate"));
            }
            Ok(v)
        })
        .collect()
}

pub fn estimate_kernel(
    kernel: &KernelSpec,
    x: &[f64],
    z: &[f64],
    m: usize,
    replicates: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if replicates < MIN_REPLICATES {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let target = kernel.eval(x, z)?;
    let est = replicate_estimates(kernel, x, z, m, replicates, seed)?;
    let (mean, stderr) = mean_and_stderr(&est);
    Ok(EstimatorReport {
        target,
        estimate_mean: mean,
        estimate_stderr: stderr,
        replicates,
        within_3se: (mean - target).abs() <= 3.0 * stderr,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical `E[ω_i ω_j]` over the first `min(d, 8)` coordinates.
pub fn rademacher_moments(d: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let k = d.min(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![vec![0i64; k]; k];
    let mut w = vec![0i64; d];
    for _ in 0..samples {
        for v in w.iter_mut() {
            *v = if rng.random::<bool>() { 1 } else { -1 };
        }
        for i in 0..k {
            for j in 0..k {
                acc[i][j] += w[i] * w[j];
            }
        }
    }
    acc.into_iter()
        .map(|row| row.into_iter().map(|s| s as f64 / samples as f64).collect())
        .collect()
}

/// Whether every empirical moment lies within `4/√samples` of `δ_ij`.
pub fn rademacher_moment_check(d: usize, samples: usize, seed: u64) -> bool {
    let tol = 4.0 / (samples as f64).sqrt();
    rademacher_moments(d, samples, seed)
        .iter()
        .enumerate()
        .all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, &v)| (v - if i == j { 1.0 } else { 0.0 }).abs() <= tol)
        })
}
