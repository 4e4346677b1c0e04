//! Regularized canonical correlation analysis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Relative eigenvalue threshold below which a covariance direction counts
/// as absent when choosing the number of canonical components.
const RANK_TOL: f64 = 1e-9;

/// Ridge used when none is given: `1e-10 · trace(Σ) / dim`.
pub const DEFAULT_RELATIVE_EPS: f64 = 1e-10;

fn centered_cov(x: &Tensor<f64>, y: Option<&Tensor<f64>>) -> Result<DMatrix<f64>> {
    let (m, p) = x.dims2()?;
    let xm = DMatrix::from_row_slice(m, p, x.data());
    let xc = center(xm);
    let other = match y {
        Some(y) => center(DMatrix::from_row_slice(m, y.last_dim(), y.data())),
        None => xc.clone(),
    };
    Ok(xc.transpose() * other / (m as f64 - 1.0))
}

fn center(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in a.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    a
}

/// Number of eigenvalues above `RANK_TOL` times the largest.
fn effective_rank(s: &DMatrix<f64>) -> usize {
    let ev = s.clone().symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    ev.iter().filter(|&&v| v > RANK_TOL * max).count()
}

/// Inverse of the lower Cholesky factor of `s + eps·I`.
fn whitener(s: &DMatrix<f64>, eps: f64, which: &str) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let reg = s + DMatrix::identity(n, n) * eps;
    let chol = reg.cholesky().ok_or_else(|| {
        Error::Singular(format!("{which} covariance is not positive definite"))
    })?;
    let l = chol.l();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular(format!("{which} Cholesky factor is singular")))
}

/// Mean canonical correlation between the rows of `x: [M x p]` and
/// `y: [M x q]`.
///
/// `eps = None` applies the default relative ridge to each side; `Some(e)`
/// adds `e·I` to both covariances. The mean runs over the top
/// `min(rank_x, rank_y)` correlations, where ranks are effective ranks of
/// the unregularized covariances, and is clipped to `[0, 1]`.
pub fn cca_similarity<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, eps: Option<f64>) -> Result<f64> {
    let (x, y): (Tensor<f64>, Tensor<f64>) = (x.cast(), y.cast());
    let (m, p) = x.dims2()?;
    let (my, q) = y.dims2()?;
    if m != my {
        return Err(Error::dim(format!("CCA views have {m} and {my} rows")));
    }
    if m < 2 {
        return Err(Error::Size("CCA needs at least 2 observations".into()));
    }
    let sxx = centered_cov(&x, None)?;
    let syy = centered_cov(&y, None)?;
    let sxy = centered_cov(&x, Some(&y))?;
    let (rx, ry) = (effective_rank(&sxx), effective_rank(&syy));
    let (ex, ey) = match eps {
        Some(e) if e < 0.0 => return Err(Error::Domain(format!("negative CCA epsilon {e}"))),
        Some(e) => (e, e),
        None => (
            DEFAULT_RELATIVE_EPS * sxx.trace() / p as f64,
            DEFAULT_RELATIVE_EPS * syy.trace() / q as f64,
        ),
    };
    if ex == 0.0 && rx < p {
        return Err(Error::Singular(format!("X covariance has rank {rx} < {p}")));
    }
    if ey == 0.0 && ry < q {
        return Err(Error::Singular(format!("Y covariance has rank {ry} < {q}")));
    }
    let c = rx.min(ry);
    if c == 0 {
        return Ok(0.0);
    }
    let kx = whitener(&sxx, ex, "X")?;
    let ky = whitener(&syy, ey, "Y")?;
    let t = &kx * sxy * ky.transpose();
    let mut sv: Vec<f64> = t.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let mean = sv.iter().take(c).sum::<f64>() / c as f64;
    Ok(mean.clamp(0.0, 1.0))
}
