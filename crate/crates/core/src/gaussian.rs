//! Multivariate Gaussian class models.
//!
//! Covariances are the biased (divide-by-n) maximum-likelihood estimate.
//! Regularization blends toward the average-variance identity:
//!
//! ```text
//! Σ_λ = (1 − λ)·Σ + λ·(tr Σ / B)·I
//! ```
//!
//! which preserves the trace and keeps λ comparable across differently
//! scaled bands. Densities are evaluated in log space through the lower
//! Cholesky factor; no explicit inverse is ever formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_lower, Matrix};
use crate::scalar::Scalar;

/// Convex shrinkage weight in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ShrinkageParam(f64);

impl ShrinkageParam {
    pub const ZERO: ShrinkageParam = ShrinkageParam(0.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(Self(lambda))
        } else {
            Err(Error::InvalidArgument(format!(
                "shrinkage parameter {lambda} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ShrinkageParam {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ShrinkageParam> for f64 {
    fn from(p: ShrinkageParam) -> f64 {
        p.0
    }
}

/// Lower Cholesky factor together with the log-determinant it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CholeskyFactor<T> {
    lower: Matrix<T>,
    log_det: T,
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        self.lower.gram()
    }

    /// Squared Mahalanobis norm `‖L⁻¹ d‖²`.
    pub fn mahalanobis_sq(&self, d: &[T]) -> Result<T> {
        let y = solve_lower(&self.lower, d)?;
        Ok(y.iter().map(|&v| v * v).sum())
    }

    /// Rebuilds a factor from a stored lower-triangular matrix, checking it.
    pub fn from_lower(lower: Matrix<T>) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::Dimension {
                expected: lower.rows(),
                got: lower.cols(),
            });
        }
        let n = lower.rows();
        let mut log_det = T::zero();
        for i in 0..n {
            let d = lower[(i, i)];
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: i,
                    pivot: d.as_f64(),
                });
            }
            if lower.row(i)[i + 1..].iter().any(|&v| v != T::zero()) {
                return Err(Error::Data("factor is not lower triangular".into()));
            }
            log_det += d.ln();
        }
        Ok(Self {
            lower,
            log_det: log_det * T::lit(2.0),
        })
    }
}

/// One fitted Gaussian class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassGaussian<T> {
    pub mean: Vec<T>,
    pub factor: CholeskyFactor<T>,
    pub sample_count: usize,
}

impl<T: Scalar> ClassGaussian<T> {
    /// Estimates, shrinks and factorizes in one step.
    pub fn fit(samples: &[&[T]], lambda: ShrinkageParam) -> Result<Self> {
        let (mean, cov) = estimate_mean_cov(samples)?;
        let factor = factorize(&shrink_covariance(&cov, lambda)?)?;
        Ok(Self {
            mean,
            factor,
            sample_count: samples.len(),
        })
    }

    pub fn log_det(&self) -> T {
        self.factor.log_det()
    }

    pub fn log_density(&self, x: &[T]) -> Result<T> {
        log_density(&self.mean, &self.factor, x)
    }
}

/// Arithmetic mean and biased sample covariance.
pub fn estimate_mean_cov<T: Scalar, S: AsRef<[T]>>(samples: &[S]) -> Result<(Vec<T>, Matrix<T>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to estimate from".into()))?;
    let b = first.as_ref().len();
    let mut mean = vec![T::zero(); b];
    for s in samples {
        let s = s.as_ref();
        if s.len() != b {
            return Err(Error::Dimension {
                expected: b,
                got: s.len(),
            });
        }
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let n = T::from_count(samples.len());
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = Matrix::zeros(b, b);
    let mut centered = vec![T::zero(); b];
    for s in samples {
        for ((c, &v), &m) in centered.iter_mut().zip(s.as_ref()).zip(&mean) {
            *c = v - m;
        }
        for i in 0..b {
            let ci = centered[i];
            if ci == T::zero() {
                continue;
            }
            let row = cov.row_mut(i);
            for j in 0..=i {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..b {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// `(1 − λ)·cov + λ·(tr(cov)/B)·I`.
pub fn shrink_covariance<T: Scalar>(cov: &Matrix<T>, lambda: ShrinkageParam) -> Result<Matrix<T>> {
    if !cov.is_square() {
        return Err(Error::Dimension {
            expected: cov.rows(),
            got: cov.cols(),
        });
    }
    let lam = lambda.value();
    if lam == 0.0 {
        return Ok(cov.clone());
    }
    let b = cov.rows();
    let avg_var = cov.trace() / T::from_count(b);
    let lam_t = T::lit(lam);
    if lam == 1.0 {
        return Ok(Matrix::identity(b).scale(avg_var));
    }
    let keep = T::one() - lam_t;
    let mut out = cov.scale(keep);
    for i in 0..b {
        out[(i, i)] += lam_t * avg_var;
    }
    Ok(out)
}

/// Cholesky decomposition `cov = L·Lᵀ`; fails on the first non-positive pivot.
pub fn factorize<T: Scalar>(cov: &Matrix<T>) -> Result<CholeskyFactor<T>> {
    if !cov.is_square() {
        return Err(Error::Dimension {
            expected: cov.rows(),
            got: cov.cols(),
        });
    }
    let n = cov.rows();
    let mut l = Matrix::<T>::zeros(n, n);
    let mut log_det = T::zero();
    for j in 0..n {
        let (head, tail) = l.as_mut_slice().split_at_mut(j * n);
        let row_j = &mut tail[..n];
        // off-diagonal entries of row j
        for k in 0..j {
            let row_k = &head[k * n..k * n + n];
            let s: T = row_j[..k].iter().zip(&row_k[..k]).map(|(&a, &b)| a * b).sum();
            row_j[k] = (cov[(j, k)] - s) / row_k[k];
        }
        let s: T = row_j[..j].iter().map(|&a| a * a).sum();
        let pivot = cov[(j, j)] - s;
        if !(pivot > T::zero()) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: pivot.as_f64(),
            });
        }
        let d = pivot.sqrt();
        row_j[j] = d;
        log_det += d.ln();
    }
    Ok(CholeskyFactor {
        lower: l,
        log_det: log_det * T::lit(2.0),
    })
}

/// `−½[B·log 2π + log|Σ| + ‖L⁻¹(x − μ)‖²]`.
pub fn log_density<T: Scalar>(mean: &[T], factor: &CholeskyFactor<T>, x: &[T]) -> Result<T> {
    let b = mean.len();
    if x.len() != b {
        return Err(Error::Dimension {
            expected: b,
            got: x.len(),
        });
    }
    if factor.dim() != b {
        return Err(Error::Dimension {
            expected: b,
            got: factor.dim(),
        });
    }
    let d: Vec<T> = x.iter().zip(mean).map(|(&xi, &mi)| xi - mi).collect();
    let maha = factor.mahalanobis_sq(&d)?;
    let log_2pi = T::lit(std::f64::consts::TAU.ln());
    Ok(-T::lit(0.5) * (T::from_count(b) * log_2pi + factor.log_det() + maha))
}

/// `log Σ exp(vᵢ)` by max subtraction. All-−∞ input yields −∞.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> Result<T> {
    let max = values
        .iter()
        .copied()
        .reduce(T::max)
        .ok_or_else(|| Error::InvalidArgument("log_sum_exp of empty list".into()))?;
    if values.len() == 1 || max == T::neg_infinity() || max == T::infinity() {
        return Ok(max);
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + s.ln())
}
