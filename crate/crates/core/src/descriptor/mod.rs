//! Classical and kernelized covariance descriptors.
//!
//! The kernelized descriptor of a trial `X` (d×T) is `K·P·Kᵀ`, where
//! `K[i, s] = k(x(s), e_i)` evaluates the kernel between every frame and the
//! first `m` canonical basis vectors, and `P` is the T×T centering matrix
//! with `P[s, s] = 1/T` and `P[s, t] = -1/(T² - T)`. With the linear kernel
//! and `m = d`, `K = X` and the descriptor is the sample covariance.
//!
//! `P` is never built: `M·P = (M - row_means)/(T - 1)`.

pub mod kernel;
pub mod store;

pub use kernel::KernelSpec;

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, logm_spd, Matrix, SymMatrix};

/// Default regularizer scale: `ε = 1e-5 · trace / d`.
pub const DEFAULT_EPS_SCALE: f64 = 1e-5;

/// Used when the descriptor has zero trace.
pub const EPSILON_FLOOR: f64 = 1e-12;

/// Per-frame feature vectors of one trial, stacked by columns (d×T).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMatrix {
    data: Matrix,
    joint_count: Option<usize>,
}

impl TrialMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "trial matrix must be non-empty, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("trial matrix"));
        }
        Ok(TrialMatrix {
            data,
            joint_count: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn with_joint_count(mut self, n: usize) -> Self {
        self.joint_count = Some(n);
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.data.cols()
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.joint_count
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    /// Frame `t` as a column vector.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.data.column(t)
    }
}

/// The T×T centering matrix, applied implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenteringMatrix {
    frames: usize,
}

impl CenteringMatrix {
    pub fn new(frames: usize) -> Result<Self> {
        if frames < 2 {
            return Err(Error::DegenerateTrial { frames });
        }
        Ok(CenteringMatrix { frames })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn diagonal_entry(&self) -> f64 {
        1.0 / self.frames as f64
    }

    pub fn off_diagonal_entry(&self) -> f64 {
        let t = self.frames as f64;
        -1.0 / (t * t - t)
    }
}

/// Computes `m·P` in O(rows·T).
pub fn centering_apply(p: CenteringMatrix, m: &Matrix) -> Result<Matrix> {
    if m.cols() != p.frames {
        return Err(Error::DimMismatch {
            expected: p.frames,
            found: m.cols(),
        });
    }
    let t = p.frames as f64;
    let scale = 1.0 / (t - 1.0);
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / t;
        for v in row.iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
    Ok(out)
}

/// `(T-1)·C·Cᵀ` with `C = M·P`, which equals `M·P·Mᵀ` because
/// `P² = P/(T-1)`. Only the upper triangle is accumulated.
fn centered_gram(p: CenteringMatrix, m: &Matrix) -> Result<SymMatrix> {
    let c = centering_apply(p, m)?;
    let d = c.rows();
    let t1 = (p.frames - 1) as f64;
    let mut s = SymMatrix::zeros(d);
    for i in 0..d {
        let ci = c.row(i);
        for j in i..d {
            let cj = c.row(j);
            let acc: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            s.set_sym(i, j, acc * t1);
        }
    }
    Ok(s)
}

/// Covariance descriptor of one trial, optionally with its cached
/// regularized matrix logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdDescriptor {
    pub matrix: SymMatrix,
    pub log_matrix: Option<SymMatrix>,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub trial_id: String,
    pub label: i32,
}

impl SpdDescriptor {
    fn new(matrix: SymMatrix, kernel: KernelSpec) -> Self {
        SpdDescriptor {
            matrix,
            log_matrix: None,
            epsilon: 0.0,
            kernel,
            trial_id: String::new(),
            label: 0,
        }
    }

    pub fn with_identity(mut self, trial_id: impl Into<String>, label: i32) -> Self {
        self.trial_id = trial_id.into();
        self.label = label;
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Tolerance below zero tolerated for the minimum eigenvalue.
    pub fn psd_tolerance(&self) -> f64 {
        1e-8 * self.matrix.trace().abs() / self.dim() as f64
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eig_sym(&self.matrix)?.min_eigenvalue())
    }

    pub fn is_psd(&self) -> Result<bool> {
        Ok(self.min_eigenvalue()? >= -self.psd_tolerance())
    }
}

/// Sample covariance `X·P·Xᵀ`.
pub fn classical_covariance(x: &TrialMatrix) -> Result<SpdDescriptor> {
    let p = CenteringMatrix::new(x.frames())?;
    let s = centered_gram(p, x.as_matrix())?;
    Ok(SpdDescriptor::new(s, KernelSpec::Linear))
}

/// `K[i, s] = k(x(s), e_i)` for the first `m` canonical probes.
///
/// Since `⟨x(s), e_i⟩ = X[i, s]`, every entry is the kernel profile applied to
/// one element of `X`.
pub fn gram_probe_matrix(k: &KernelSpec, x: &TrialMatrix, m: usize) -> Result<Matrix> {
    k.validate()?;
    if m == 0 || m > x.dim() {
        return Err(Error::ProbeCountExceedsDim {
            probes: m,
            dim: x.dim(),
        });
    }
    let t = x.frames();
    let src = x.as_matrix();
    let mut out = Matrix::zeros(m, t);
    for i in 0..m {
        let dst = out.row_mut(i);
        for (d, &v) in dst.iter_mut().zip(src.row(i)) {
            *d = k.eval_dot(v);
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("kernel probe matrix"));
    }
    Ok(out)
}

/// `Ŝ(k) = K·P·Kᵀ`.
pub fn kernelized_covariance(k: &KernelSpec, x: &TrialMatrix, m: usize) -> Result<SpdDescriptor> {
    let p = CenteringMatrix::new(x.frames())?;
    let kmat = gram_probe_matrix(k, x, m)?;
    let s = centered_gram(p, &kmat)?;
    Ok(SpdDescriptor::new(s, *k))
}

/// Caches `log(S + εI)` with `ε = eps_scale · trace(S) / d`.
pub fn regularize_and_log(mut s: SpdDescriptor, eps_scale: f64) -> Result<SpdDescriptor> {
    if !(eps_scale >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eps_scale must be nonnegative, got {eps_scale}"
        )));
    }
    let trace = s.matrix.trace();
    let epsilon = if trace == 0.0 {
        EPSILON_FLOOR
    } else {
        eps_scale * trace / s.dim() as f64
    };
    s.log_matrix = Some(logm_spd(&s.matrix, epsilon)?);
    s.epsilon = epsilon;
    Ok(s)
}

/// Descriptor extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorConfig {
    pub kernel: KernelSpec,
    /// Probe count; `None` means one probe per data dimension.
    pub probes: Option<usize>,
    pub eps_scale: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            kernel: KernelSpec::ExpDot { sigma: 1.0 },
            probes: None,
            eps_scale: DEFAULT_EPS_SCALE,
        }
    }
}

/// Kernelized covariance followed by the regularized log.
pub fn describe(x: &TrialMatrix, cfg: &DescriptorConfig) -> Result<SpdDescriptor> {
    let m = cfg.probes.unwrap_or(x.dim());
    let s = kernelized_covariance(&cfg.kernel, x, m)?;
    regularize_and_log(s, cfg.eps_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E: f64 = std::f64::consts::E;

    fn dense_p(t: usize) -> Matrix {
        let tf = t as f64;
        let mut p = Matrix::zeros(t, t);
        for s in 0..t {
            for u in 0..t {
                p.set(s, u, if s == u { 1.0 / tf } else { -1.0 / (tf * tf - tf) });
            }
        }
        p
    }

    fn random_trial(d: usize, t: usize, rng: &mut ChaCha8Rng) -> TrialMatrix {
        let data = (0..d * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        TrialMatrix::new(Matrix::from_vec(d, t, data).unwrap()).unwrap()
    }

    #[test]
    fn two_frame_centering_matrix() {
        let p = CenteringMatrix::new(2).unwrap();
        assert_eq!(p.diagonal_entry(), 0.5);
        assert_eq!(p.off_diagonal_entry(), -0.5);
        let applied = centering_apply(p, &Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert_eq!(applied, Matrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]]));
    }

    #[test]
    fn constant_row_centers_to_zero() {
        let p = CenteringMatrix::new(4).unwrap();
        let out = centering_apply(p, &Matrix::from_rows(&[[3.5; 4]])).unwrap();
        assert_eq!(out.row(0), &[0.0; 4]);
    }

    #[test]
    fn centering_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_trial(3, 5, &mut rng);
        let fast = centering_apply(CenteringMatrix::new(5).unwrap(), m.as_matrix()).unwrap();
        let dense = m.as_matrix().matmul(&dense_p(5)).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert!((fast.get(i, j) - dense.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centering_dim_mismatch() {
        let p = CenteringMatrix::new(3).unwrap();
        assert!(matches!(
            centering_apply(p, &Matrix::zeros(2, 4)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn sample_variance_of_one_two_three() {
        let x = TrialMatrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let s = classical_covariance(&x).unwrap();
        assert!((s.matrix.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_columns_have_zero_covariance() {
        let x = TrialMatrix::from_rows(&[[2.0, 2.0, 2.0], [-1.0, -1.0, -1.0]]).unwrap();
        assert!(classical_covariance(&x).unwrap().matrix.frobenius_norm() < 1e-24);
        for k in [
            KernelSpec::Linear,
            KernelSpec::polynomial(3, 1.0).unwrap(),
            KernelSpec::exp_dot(1.0).unwrap(),
        ] {
            // The row mean of a constant row is only exact up to rounding.
            let s = kernelized_covariance(&k, &x, 2).unwrap().matrix;
            assert!(s.frobenius_norm() < 1e-20, "{k}: {s:?}");
        }
    }

    #[test]
    fn single_frame_is_degenerate() {
        let x = TrialMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            classical_covariance(&x),
            Err(Error::DegenerateTrial { frames: 1 })
        ));
    }

    #[test]
    fn summation_form_matches_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_trial(4, 20, &mut rng);
        let s = classical_covariance(&x).unwrap().matrix;
        let t = 20;
        let mu: Vec<f64> = (0..4).map(|i| x.as_matrix().row(i).iter().sum::<f64>() / t as f64).collect();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for f in 0..t {
                    acc += (x.as_matrix().get(i, f) - mu[i]) * (x.as_matrix().get(j, f) - mu[j]);
                }
                assert!((acc / (t - 1) as f64 - s.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probe_matrix_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_trial(3, 6, &mut rng);
        assert_eq!(&gram_probe_matrix(&KernelSpec::Linear, &x, 3).unwrap(), x.as_matrix());

        let x = TrialMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let k = gram_probe_matrix(&KernelSpec::exp_dot(1.0).unwrap(), &x, 2).unwrap();
        assert_eq!(k, Matrix::from_rows(&[[1.0, E], [E, 1.0]]));

        let x = TrialMatrix::from_rows(&[[2.0]]).unwrap();
        let k = gram_probe_matrix(&KernelSpec::polynomial(2, 0.0).unwrap(), &x, 1).unwrap();
        assert_eq!(k, Matrix::from_rows(&[[4.0]]));
    }

    #[test]
    fn probe_count_bounds() {
        let x = TrialMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert!(matches!(
            gram_probe_matrix(&KernelSpec::Linear, &x, 3),
            Err(Error::ProbeCountExceedsDim { probes: 3, dim: 2 })
        ));
        assert!(gram_probe_matrix(&KernelSpec::Linear, &x, 0).is_err());
        let k = gram_probe_matrix(&KernelSpec::Linear, &x, 1).unwrap();
        assert_eq!(k, Matrix::from_rows(&[[1.0, 2.0]]));
    }

    #[test]
    fn probe_overflow_is_reported() {
        let x = TrialMatrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        assert!(matches!(
            gram_probe_matrix(&KernelSpec::exp_dot(1.0).unwrap(), &x, 1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn expdot_hand_computed_descriptor() {
        let x = TrialMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let s = kernelized_covariance(&KernelSpec::exp_dot(1.0).unwrap(), &x, 2).unwrap();
        let v = 0.5 * (1.0 - E).powi(2);
        let expected = SymMatrix::from_rows(&[[v, -v], [-v, v]]).unwrap();
        assert!(frobenius_distance(&s.matrix, &expected).unwrap() < 1e-12);
        assert!((s.matrix.get(0, 0) - 1.47625).abs() < 1e-5);
    }

    #[test]
    fn linear_kernel_reduces_to_classical() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random_trial(7, 13, &mut rng);
        let a = kernelized_covariance(&KernelSpec::Linear, &x, 7).unwrap();
        let b = classical_covariance(&x).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn regularize_examples() {
        let s = SpdDescriptor::new(SymMatrix::identity(3), KernelSpec::Linear);
        let r = regularize_and_log(s, 0.0).unwrap();
        assert_eq!(r.log_matrix.unwrap(), SymMatrix::zeros(3));

        let s = SpdDescriptor::new(SymMatrix::from_diagonal(&[1.0, 0.0]), KernelSpec::Linear);
        let r = regularize_and_log(s, 1e-5).unwrap();
        assert_eq!(r.epsilon, 5e-6);
        let min_shifted = r.min_eigenvalue().unwrap() + r.epsilon;
        assert!((min_shifted - 5e-6).abs() < 1e-20);

        let s = SpdDescriptor::new(SymMatrix::from_diagonal(&[E, E]), KernelSpec::Linear);
        let r = regularize_and_log(s, 0.0).unwrap();
        let l = r.log_matrix.unwrap();
        assert!(frobenius_distance(&l, &SymMatrix::identity(2)).unwrap() < 1e-15);
    }

    #[test]
    fn zero_descriptor_uses_floor() {
        let s = SpdDescriptor::new(SymMatrix::zeros(2), KernelSpec::Linear);
        let r = regularize_and_log(s, 1e-5).unwrap();
        assert_eq!(r.epsilon, EPSILON_FLOOR);
    }

    #[test]
    fn cached_log_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_trial(6, 4, &mut rng);
        let d = describe(&x, &DescriptorConfig::default()).unwrap();
        let again = logm_spd(&d.matrix, d.epsilon).unwrap();
        assert_eq!(d.log_matrix.as_ref().unwrap(), &again);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn frame_permutation_invariance(seed in any::<u64>(), d in 1usize..8, t in 2usize..30) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_trial(d, t, &mut rng);
                let mut perm: Vec<usize> = (0..t).collect();
                for i in (1..t).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let mut shuffled = Matrix::zeros(d, t);
                for (dst, &src) in perm.iter().enumerate() {
                    for i in 0..d {
                        shuffled.set(i, dst, x.as_matrix().get(i, src));
                    }
                }
                let y = TrialMatrix::new(shuffled).unwrap();
                let k = KernelSpec::exp_dot(1.5).unwrap();
                let a = kernelized_covariance(&k, &x, d).unwrap().matrix;
                let b = kernelized_covariance(&k, &y, d).unwrap().matrix;
                prop_assert!(frobenius_distance(&a, &b).unwrap() < 1e-12);
                let a = classical_covariance(&x).unwrap().matrix;
                let b = classical_covariance(&y).unwrap().matrix;
                prop_assert!(frobenius_distance(&a, &b).unwrap() < 1e-12);
            }

            #[test]
            fn descriptors_are_psd(seed in any::<u64>(), d in 1usize..10, t in 2usize..40) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_trial(d, t, &mut rng);
                for k in [
                    KernelSpec::Linear,
                    KernelSpec::polynomial(2, 0.0).unwrap(),
                    KernelSpec::polynomial(3, 1.0).unwrap(),
                    KernelSpec::exp_dot(1.0).unwrap(),
                ] {
                    let s = kernelized_covariance(&k, &x, d).unwrap();
                    prop_assert!(s.is_psd().unwrap());
                }
            }

            #[test]
            fn expdot_probe_is_entrywise_exp(seed in any::<u64>(), sigma in 0.5f64..4.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_trial(5, 9, &mut rng);
                let k = gram_probe_matrix(&KernelSpec::exp_dot(sigma).unwrap(), &x, 5).unwrap();
                let expected = x.as_matrix().map(|v| (v / (sigma * sigma)).exp());
                prop_assert_eq!(k, expected);
            }
        }
    }
}
