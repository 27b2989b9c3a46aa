//! Kernel evaluation, Gram assembly and regularized solves.
//!
//! Two kernels are used throughout: a polynomial kernel
//! `(a <x, y> + b)^d` for conditioning on the current state (it keeps the
//! embedding weights polynomial in `x`), and a squared-exponential kernel for
//! the RKHS the barrier approximation lives in.
//!
//! ```
//! use cme_barrier::kernels::{eval_kernel, KernelSpec};
//!
//! let k = KernelSpec::polynomial(1.0, 1.0, 2).unwrap();
//! assert_eq!(eval_kernel(&k, &[1.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);
//! ```

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

/// A positive-definite kernel on `R^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `(a <x, y> + b)^degree`
    Polynomial { a: f64, b: f64, degree: u32 },
    /// `signal_variance * exp(-|x - y|^2 / (2 lengthscale_sq))`
    SquaredExponential { signal_variance: f64, lengthscale_sq: f64 },
}

impl KernelSpec {
    pub fn polynomial(a: f64, b: f64, degree: u32) -> Result<Self> {
        let spec = KernelSpec::Polynomial { a, b, degree };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(signal_variance: f64, lengthscale_sq: f64) -> Result<Self> {
        let spec = KernelSpec::SquaredExponential { signal_variance, lengthscale_sq };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { a, b, degree } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(invalid("a", format!("must be positive, got {a}")));
                }
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(invalid("b", format!("must be nonnegative, got {b}")));
                }
                if degree == 0 {
                    return Err(invalid("d", "degree must be at least 1".into()));
                }
            }
            KernelSpec::SquaredExponential { signal_variance, lengthscale_sq } => {
                if !(signal_variance > 0.0 && signal_variance.is_finite()) {
                    return Err(invalid(
                        "sigma_f_sq",
                        format!("must be positive, got {signal_variance}"),
                    ));
                }
                if !(lengthscale_sq > 0.0 && lengthscale_sq.is_finite()) {
                    return Err(invalid(
                        "sigma_l_sq",
                        format!("must be positive, got {lengthscale_sq}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Kernel value without the dimension check. Callers guarantee
    /// `x.len() == y.len()`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Polynomial { a, b, degree } => {
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                (a * dot + b).powi(degree as i32)
            }
            KernelSpec::SquaredExponential { signal_variance, lengthscale_sq } => {
                let dist_sq: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                signal_variance * (-dist_sq / (2.0 * lengthscale_sq)).exp()
            }
        }
    }

    /// `k(x, x)`.
    pub fn diagonal(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x, x)
    }
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(spec.eval_unchecked(x, y))
}

fn check_uniform(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| invalid("points", "point set is empty".into()))?;
    for p in points {
        check_dim(dim, p.len())?;
    }
    Ok(dim)
}

/// Gram matrix `K[i][j] = k(points[i], points[j])`.
///
/// Only the upper triangle is evaluated; the lower triangle is mirrored so
/// the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<Mat<f64>> {
    check_uniform(points)?;
    let n = points.len();
    let mut buf = vec![0.0; n * n];
    // column-major: column j holds k(points[i], points[j]) for i <= j
    buf.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        for i in 0..=j {
            col[i] = spec.eval_unchecked(&points[i], &points[j]);
        }
    });
    Ok(Mat::from_fn(n, n, |i, j| if i <= j { buf[j * n + i] } else { buf[i * n + j] }))
}

/// Vector of kernel sections `[k(x, anchors[i])]_i`.
pub fn kvec(spec: &KernelSpec, anchors: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let dim = check_uniform(anchors)?;
    check_dim(dim, x.len())?;
    Ok(anchors.iter().map(|a| spec.eval_unchecked(x, a)).collect())
}

/// Cholesky factorization of `K + n_times_lambda * I`.
#[derive(Debug)]
pub struct GramFactorization {
    llt: Llt<f64>,
    n_times_lambda: f64,
}

/// Relative pivot threshold below which the factorization is treated as
/// singular: `L_ii^2 <= dim * eps * max_i A_ii`.
fn pivot_floor(dim: usize, max_diag: f64) -> f64 {
    dim as f64 * f64::EPSILON * max_diag
}

pub fn factorize_regularized(k: MatRef<'_, f64>, n_times_lambda: f64) -> Result<GramFactorization> {
    if k.nrows() != k.ncols() {
        return Err(Error::DimensionMismatch { expected: k.nrows(), got: k.ncols() });
    }
    if !(n_times_lambda >= 0.0 && n_times_lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be nonnegative, got {n_times_lambda}")));
    }
    let n = k.nrows();
    if n == 0 {
        return Err(invalid("K", "matrix is empty".into()));
    }
    let mut reg = k.to_owned();
    for i in 0..n {
        reg[(i, i)] += n_times_lambda;
    }
    let max_diag = (0..n).map(|i| reg[(i, i)].abs()).fold(0.0, f64::max);
    let llt = Llt::new(reg.as_ref(), Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite { pivot: first_bad_pivot(reg.as_ref()), dim: n })?;
    let floor = pivot_floor(n, max_diag);
    for i in 0..n {
        let d = llt.L()[(i, i)];
        if !(d.is_finite() && d * d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: i, dim: n });
        }
    }
    Ok(GramFactorization { llt, n_times_lambda })
}

// Unblocked re-run used only to report where a failed factorization broke.
fn first_bad_pivot(a: MatRef<'_, f64>) -> usize {
    let n = a.nrows();
    let mut l = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return j;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    n
}

impl GramFactorization {
    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// The regularizer `N * lambda` that was added to the diagonal.
    pub fn regularizer(&self) -> f64 {
        self.n_times_lambda
    }

    /// Lower-triangular factor `L` with `L L^T = K + N lambda I`.
    pub fn factor(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    /// Solves `(K + N lambda I) z = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), rhs.len())?;
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let z = self.llt.solve(&b);
        Ok((0..rhs.len()).map(|i| z[(i, 0)]).collect())
    }

    /// Solves against every column of `rhs`.
    pub fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        check_dim(self.dim(), rhs.nrows())?;
        Ok(self.llt.solve(rhs))
    }

    /// `L L^T`, i.e. the regularized Gram matrix the factor represents.
    pub fn reconstruct(&self) -> Mat<f64> {
        let l = self.llt.L();
        l * l.transpose()
    }
}
