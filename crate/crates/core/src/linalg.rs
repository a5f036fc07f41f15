//! Dense symmetric-matrix kernels.
//!
//! Everything here works on small dense matrices (descriptor sizes stay
//! below a few hundred rows), so storage is a flat row-major `Vec<f64>` and
//! the eigensolver is cyclic Jacobi. All functions are pure.

use std::fmt;

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Off-diagonal Frobenius norm threshold, relative to `‖A‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Square matrix with exactly symmetric storage.
///
/// Construction from arbitrary square data averages `(A + Aᵀ)/2`, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dim must be >= 1");
        SymMatrix {
            inner: Matrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.inner.set(i, i, v);
        }
        m
    }

    /// Symmetrizes a square matrix.
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::ShapeMismatch(format!(
                "expected a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if a.rows() == 0 {
            return Err(Error::ShapeMismatch("empty matrix".into()));
        }
        let n = a.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out.set(i, i, a.get(i, i));
            for j in (i + 1)..n {
                let v = 0.5 * (a.get(i, j) + a.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        Ok(SymMatrix { inner: out })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows))
    }

    /// Builds from the row-major upper triangle (`dim·(dim+1)/2` values).
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected || dim == 0 {
            return Err(Error::DimMismatch {
                expected,
                found: upper.len(),
            });
        }
        let mut m = Matrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, upper[k]);
                m.set(j, i, upper[k]);
                k += 1;
            }
        }
        Ok(SymMatrix { inner: m })
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.inner.row(i)[i..]);
        }
        out
    }

    /// Sets `(i, j)` and `(j, i)` together.
    pub(crate) fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.inner.set(i, j, v);
        self.inner.set(j, i, v);
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix {
            inner: self.inner.map(|v| v * c),
        }
    }

    pub fn add_diagonal(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.dim() {
            let v = out.inner.get(i, i) + c;
            out.inner.set(i, i, v);
        }
        out
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym")?;
        self.inner.fmt(f)
    }
}

/// `A = V·diag(λ)·Vᵀ` with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// Rebuilds `V·diag(f(λ))·Vᵀ`. Only the upper triangle is computed, so
    /// the result is exactly symmetric.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigenvalues.len();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = &self.eigenvectors;
        // Work on rows of V (= eigenvector components per coordinate).
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            let vi = v.row(i);
            for j in i..n {
                let vj = v.row(j);
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vi[k] * fl[k] * vj[k];
                }
                out.set_sym(i, j, acc);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty decomposition")
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending; each eigenvector column is
/// sign-normalized so that its largest-magnitude component is nonnegative.
pub fn eig_sym(a: &SymMatrix) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::NonFinite("eig_sym input"));
    }
    let n = a.dim();
    let mut w = a.as_matrix().clone().into_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let tol = JACOBI_REL_TOL * a.frobenius_norm();
    let off_norm = |w: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += w[i * n + j] * w[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&w) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- A·J (columns p, q)
                for k in 0..n {
                    let akp = w[k * n + p];
                    let akq = w[k * n + q];
                    w[k * n + p] = c * akp - s * akq;
                    w[k * n + q] = s * akp + c * akq;
                }
                // A <- Jᵀ·A (rows p, q)
                for k in 0..n {
                    let apk = w[p * n + k];
                    let aqk = w[q * n + k];
                    w[p * n + k] = c * apk - s * aqk;
                    w[q * n + k] = s * apk + c * aqk;
                }
                w[p * n + q] = 0.0;
                w[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_norm(&w);
        if off > tol {
            return Err(Error::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off_norm: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order among exact ties.
    order.sort_by(|&i, &j| w[j * n + j].total_cmp(&w[i * n + i]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| w[i * n + i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for k in 1..n {
            if v[k * n + src].abs() > v[pivot * n + src].abs() {
                pivot = k;
            }
        }
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vecs.set(k, col, sign * v[k * n + src]);
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vecs,
    })
}

/// `log(A + εI)` for symmetric `A` whose shifted spectrum is positive.
pub fn logm_spd(a: &SymMatrix, epsilon: f64) -> Result<SymMatrix> {
    assert!(epsilon >= 0.0, "epsilon must be nonnegative");
    let eig = eig_sym(a)?;
    let min = eig.min_eigenvalue();
    if !(min + epsilon > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            epsilon,
        });
    }
    Ok(eig.reconstruct_with(|l| (l + epsilon).ln()))
}

pub fn expm_sym(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = eig_sym(a)?;
    if eig.eigenvalues.iter().any(|l| !l.exp().is_finite()) {
        return Err(Error::NonFinite("expm_sym exponent"));
    }
    Ok(eig.reconstruct_with(f64::exp))
}

pub fn frobenius_distance(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    Ok(squared_frobenius_distance(a, b)?.sqrt())
}

pub fn squared_frobenius_distance(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.as_matrix()
        .as_slice()
        .iter()
        .zip(b.as_matrix().as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Whether `A + shift·I` admits a Cholesky factorization.
///
/// Used as an O(n³/3) positive-semidefiniteness probe: success with
/// `shift = tol` implies the minimum eigenvalue of `A` is above `-tol`.
pub fn cholesky_succeeds(a: &SymMatrix, shift: f64) -> bool {
    let n = a.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j) + shift;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}
