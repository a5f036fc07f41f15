//! Dot-product kernels `k(x, z) = Σ a_ℓ ⟨x, z⟩^ℓ` with `a_ℓ ≥ 0`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `⟨x, z⟩`
    Linear,
    /// `⟨x, z⟩^degree + offset`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(⟨x, z⟩ / σ²)`
    ExpDot { sigma: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let k = KernelSpec::Polynomial { degree, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn exp_dot(sigma: f64) -> Result<Self> {
        let k = KernelSpec::ExpDot { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::InvalidKernel("polynomial degree must be >= 1".into()));
                }
                if !(offset >= 0.0) || !offset.is_finite() {
                    return Err(Error::InvalidKernel(format!(
                        "polynomial offset must be a finite nonnegative number, got {offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::ExpDot { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidKernel(format!(
                        "exp-dot sigma must be positive and finite, got {sigma}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Series coefficient `a_ℓ`.
    pub fn coefficient(&self, degree: u32) -> f64 {
        match *self {
            KernelSpec::Linear => {
                if degree == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelSpec::Polynomial {
                degree: d,
                offset,
            } => {
                let mut a = 0.0;
                if degree == d {
                    a += 1.0;
                }
                if degree == 0 {
                    a += offset;
                }
                a
            }
            KernelSpec::ExpDot { sigma } => {
                // 1 / (σ^{2ℓ} ℓ!), accumulated as a product to stay finite longer.
                let s2 = sigma * sigma;
                (1..=degree).fold(1.0, |acc, k| acc / (s2 * k as f64))
            }
        }
    }

    /// Highest degree with a nonzero coefficient, `None` for infinite series.
    pub fn max_degree(&self) -> Option<u32> {
        match *self {
            KernelSpec::Linear => Some(1),
            KernelSpec::Polynomial { degree, .. } => Some(degree),
            KernelSpec::ExpDot { .. } => None,
        }
    }

    /// The kernel as a function of the inner product `⟨x, z⟩`.
    #[inline]
    pub fn eval_dot(&self, dot: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Polynomial { degree, offset } => dot.powi(degree as i32) + offset,
            KernelSpec::ExpDot { sigma } => (dot / (sigma * sigma)).exp(),
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != z.len() {
            return Err(Error::DimMismatch {
                expected: x.len(),
                found: z.len(),
            });
        }
        let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
        if !dot.is_finite() {
            return Err(Error::NonFinite("kernel inputs"));
        }
        let v = self.eval_dot(dot);
        if !v.is_finite() {
            return Err(Error::NonFinite("kernel value"));
        }
        Ok(v)
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            KernelSpec::Linear => 0,
            KernelSpec::Polynomial { .. } => 1,
            KernelSpec::ExpDot { .. } => 2,
        }
    }

    pub(crate) fn params(&self) -> [f64; 2] {
        match *self {
            KernelSpec::Linear => [0.0, 0.0],
            KernelSpec::Polynomial { degree, offset } => [degree as f64, offset],
            KernelSpec::ExpDot { sigma } => [sigma, 0.0],
        }
    }

    pub(crate) fn from_tag(tag: u8, params: [f64; 2]) -> Result<Self> {
        let k = match tag {
            0 => KernelSpec::Linear,
            1 => {
                let d = params[0];
                if d.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&d) {
                    return Err(Error::Format(format!("bad polynomial degree {d}")));
                }
                KernelSpec::Polynomial {
                    degree: d as u32,
                    offset: params[1],
                }
            }
            2 => KernelSpec::ExpDot { sigma: params[0] },
            t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        k.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(k)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, offset } => {
                write!(f, "poly(degree={degree},offset={offset:?})")
            }
            KernelSpec::ExpDot { sigma } => write!(f, "expdot(sigma={sigma:?})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expdot_orthogonal_is_one() {
        let k = KernelSpec::exp_dot(1.0).unwrap();
        assert_eq!(k.eval(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_offset_outside_power() {
        let k = KernelSpec::polynomial(2, 0.0).unwrap();
        assert_eq!(k.eval(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 4.0);
        let k = KernelSpec::polynomial(2, 3.0).unwrap();
        assert_eq!(k.eval(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 7.0);
    }

    #[test]
    fn expdot_matches_truncated_series() {
        let k = KernelSpec::exp_dot(1.0).unwrap();
        let pairs: [(&[f64], &[f64]); 3] = [
            (&[1.0, 1.0], &[1.0, 0.5]),
            (&[2.0, 0.0], &[0.0, -2.0]),
            (&[1.2, -1.5], &[-1.1, 1.6]),
        ];
        for (x, z) in pairs {
            let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
            let series: f64 = (0..=50).map(|l| k.coefficient(l) * dot.powi(l as i32)).sum();
            let direct = k.eval(x, z).unwrap();
            assert!((series - direct).abs() < 1e-10 * direct.max(1.0), "{series} vs {direct}");
        }
    }

    #[test]
    fn coefficients_nonnegative() {
        let kernels = [
            KernelSpec::Linear,
            KernelSpec::polynomial(3, 0.5).unwrap(),
            KernelSpec::exp_dot(0.7).unwrap(),
        ];
        for k in kernels {
            for l in 0..40 {
                assert!(k.coefficient(l) >= 0.0);
            }
        }
        assert_eq!(KernelSpec::Linear.coefficient(1), 1.0);
        assert_eq!(KernelSpec::Linear.coefficient(2), 0.0);
        let e = KernelSpec::exp_dot(2.0).unwrap();
        assert!((e.coefficient(3) - 1.0 / (64.0 * 6.0)).abs() < 1e-18);
    }

    #[test]
    fn overflow_is_an_error() {
        let k = KernelSpec::exp_dot(0.1).unwrap();
        assert!(matches!(k.eval(&[10.0], &[10.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(KernelSpec::exp_dot(0.0).is_err());
        assert!(KernelSpec::exp_dot(-1.0).is_err());
        assert!(KernelSpec::polynomial(0, 1.0).is_err());
        assert!(KernelSpec::polynomial(2, -1.0).is_err());
    }

    #[test]
    fn tag_roundtrip() {
        for k in [
            KernelSpec::Linear,
            KernelSpec::polynomial(3, 0.25).unwrap(),
            KernelSpec::exp_dot(1.5).unwrap(),
        ] {
            assert_eq!(KernelSpec::from_tag(k.tag(), k.params()).unwrap(), k);
        }
        assert!(KernelSpec::from_tag(9, [0.0, 0.0]).is_err());
    }
}
